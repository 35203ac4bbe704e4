r"""Multi-task loss terms as pure functions of caller-supplied values.

Nothing here evaluates a network: discriminator outputs, discriminator
features, perceptual features and identity/appearance embeddings are inputs.
Arrays are treated as a batch along axis 0 (a 1-D vector is a batch of one)
and every expectation is a batch mean.

Hinge terms::

    L_G(real, fake) = E[max(0, 1 + D(fake)) + max(0, 1 - D(real))]
    L_D(fake)       = E[-D(fake)]

Two modes select the branch of each two-branch term: ``reconstruction``
(identity input taken from x itself) and ``cycle`` (identity swapped to y
and back). In cycle mode the first-pass output ``y_hat`` fills the slots
named ``*_xhat`` below.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from typing import Sequence

import numpy as np

from .errors import ShapeError

MODES = ("reconstruction", "cycle")


@dataclass(frozen=True)
class LossWeights:
    lambda1: float = 1.0
    lambda2: float = 1.0
    lambda3: float = 1.0
    lambda4: float = 1.0
    lambda5: float = 2.0
    lambda6: float = 2.0
    beta1: float = 0.6
    beta2: float = 2.0
    beta3: float = 0.8

    @property
    def lambdas(self) -> tuple[float, ...]:
        return (self.lambda1, self.lambda2, self.lambda3, self.lambda4, self.lambda5, self.lambda6)

    def scaled(self, c: float) -> "LossWeights":
        return LossWeights(*(c * getattr(self, f.name) if f.name.startswith("lambda") else getattr(self, f.name)
                             for f in fields(self)))


@dataclass
class LossInputs:
    """Everything the six terms may need; unused slots stay None.

    Discriminator scores: ``d_real`` is D(x, S_x); ``d_xhat`` D of the first
    generated image (x_hat, or y_hat in cycle mode); ``d_xbar`` D of the
    cycle-back image x_bar.

    ``perceptual`` holds one dict per feature extractor with keys ``x``,
    ``xhat`` and, in cycle mode, ``xbar``.
    """

    mode: str = "reconstruction"
    d_real: np.ndarray | None = None
    d_xhat: np.ndarray | None = None
    d_xbar: np.ndarray | None = None
    disc_feats_real: Sequence[np.ndarray] | None = None
    disc_feats_fake: Sequence[np.ndarray] | None = None
    perceptual: Sequence[dict] = field(default_factory=list)
    fa_x: np.ndarray | None = None
    fa_xhat: np.ndarray | None = None
    f_x: np.ndarray | None = None
    f_xhat: np.ndarray | None = None
    f_y: np.ndarray | None = None
    f_xbar: np.ndarray | None = None
    x_b: np.ndarray | None = None
    g_b: np.ndarray | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")

    def need(self, *names: str):
        missing = [n for n in names if getattr(self, n) is None]
        if missing:
            raise ValueError(f"{self.mode} mode needs {', '.join(missing)}")
        return [np.asarray(getattr(self, n), dtype=np.float64) for n in names]


def _batch(a) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    return a.reshape(1, -1) if a.ndim <= 1 else a.reshape(a.shape[0], -1)


def _same_shape(a, b, what: str):
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape:
        raise ShapeError(f"{what}: shape mismatch {a.shape} vs {b.shape}")


def hinge_generator(d_real, d_fake) -> float:
    return float(np.mean(np.maximum(0.0, 1.0 + np.asarray(d_fake, dtype=np.float64)))
                 + np.mean(np.maximum(0.0, 1.0 - np.asarray(d_real, dtype=np.float64))))


def hinge_critic(d_fake) -> float:
    return float(np.mean(-np.asarray(d_fake, dtype=np.float64)))


@dataclass(frozen=True)
class AdvLoss:
    generator: float
    critic: float

    @property
    def total(self) -> float:
        return self.generator + self.critic


def adv_loss(inputs: LossInputs, weights: LossWeights = LossWeights()) -> AdvLoss:
    """L_1 split into its hinge-generator and critic parts (``total`` is L_1)."""
    if inputs.mode == "reconstruction":
        real, fake = inputs.need("d_real", "d_xhat")
        return AdvLoss(hinge_generator(real, fake), hinge_critic(fake))
    real, yhat, xbar = inputs.need("d_real", "d_xhat", "d_xbar")
    b1 = weights.beta1
    return AdvLoss(
        b1 * hinge_generator(real, yhat) + hinge_generator(yhat, xbar),
        b1 * hinge_critic(yhat) + hinge_critic(xbar),
    )


def l1_mean(a, b) -> float:
    _same_shape(a, b, "l1")
    return float(np.mean(np.abs(np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64))))


def feature_match_loss(feats_a: Sequence, feats_b: Sequence) -> float:
    """Mean over layers of the mean absolute difference."""
    if len(feats_a) != len(feats_b):
        raise ShapeError(f"{len(feats_a)} layers vs {len(feats_b)}")
    if not feats_a:
        return 0.0
    return float(np.mean([l1_mean(a, b) for a, b in zip(feats_a, feats_b)]))


def distance(a, b, norm: str = "l2") -> np.ndarray:
    """Per-sample l2 (or l1) distance between two batches."""
    _same_shape(a, b, "distance")
    diff = _batch(a) - _batch(b)
    if norm == "l2":
        return np.sqrt(np.sum(diff ** 2, axis=1))
    if norm == "l1":
        return np.sum(np.abs(diff), axis=1)
    raise ValueError(f"unknown norm {norm!r}")


def perceptual_loss(inputs: LossInputs, weights: LossWeights = LossWeights(), norm: str = "l2") -> float:
    if not inputs.perceptual:
        raise ValueError("perceptual loss needs at least one feature pair")
    per_sample = 0.0
    for i, feats in enumerate(inputs.perceptual):
        keys = ("x", "xhat") if inputs.mode == "reconstruction" else ("x", "xhat", "xbar")
        missing = [k for k in keys if k not in feats]
        if missing:
            raise ValueError(f"perceptual extractor {i} lacks {missing}")
        if inputs.mode == "reconstruction":
            per_sample = per_sample + distance(feats["x"], feats["xhat"], norm)
        else:
            per_sample = per_sample + (weights.beta3 * distance(feats["x"], feats["xhat"], norm)
                                       + distance(feats["xbar"], feats["x"], norm))
    return float(np.mean(per_sample))


def cosine(a, b) -> np.ndarray:
    a, b = _batch(a), _batch(b)
    na, nb = np.linalg.norm(a, axis=1), np.linalg.norm(b, axis=1)
    if np.any(na == 0) or np.any(nb == 0):
        raise ValueError("cosine similarity of a zero vector is undefined")
    return np.sum(a * b, axis=1) / (na * nb)


def appearance_loss(fa_x, fa_xhat, f_x) -> float:
    """E[||f_a(x) - f_a(x_hat)||_1] + E[max(0, cos(f_a(x), f_x))]."""
    _same_shape(fa_x, fa_xhat, "appearance features")
    d_a = distance(fa_x, fa_xhat, "l1")
    d_e = np.maximum(0.0, cosine(fa_x, f_x))
    return float(np.mean(d_a) + np.mean(d_e))


def identity_loss(inputs: LossInputs, weights: LossWeights = LossWeights()) -> float:
    if inputs.mode == "reconstruction":
        f_xhat, f_x = inputs.need("f_xhat", "f_x")
        return float(np.mean(distance(f_xhat, f_x)))
    f_yhat, f_y, f_xbar, f_x = inputs.need("f_xhat", "f_y", "f_xbar", "f_x")
    return float(np.mean(weights.beta2 * distance(f_yhat, f_y) + distance(f_xbar, f_x)))


def background_loss(x_b, g_b) -> float:
    return l1_mean(x_b, g_b)


def total_loss(components: Sequence[float], weights: LossWeights = LossWeights()) -> float:
    if len(components) != 6:
        raise ValueError(f"expected 6 loss components, got {len(components)}")
    return float(sum(l * c for l, c in zip(weights.lambdas, components)))


def all_losses(inputs: LossInputs, weights: LossWeights = LossWeights(), norm: str = "l2") -> dict[str, float]:
    """Evaluate every term whose inputs are present; absent terms count as 0."""
    out = {}
    out["L1_adversarial"] = adv_loss(inputs, weights).total if inputs.d_real is not None else 0.0
    out["L2_feature_match"] = (feature_match_loss(inputs.disc_feats_real, inputs.disc_feats_fake)
                               if inputs.disc_feats_real is not None else 0.0)
    out["L3_perceptual"] = perceptual_loss(inputs, weights, norm) if inputs.perceptual else 0.0
    out["L4_appearance"] = (appearance_loss(inputs.fa_x, inputs.fa_xhat, inputs.f_x)
                            if inputs.fa_x is not None else 0.0)
    out["L5_identity"] = identity_loss(inputs, weights) if inputs.f_xhat is not None else 0.0
    out["L6_background"] = background_loss(inputs.x_b, inputs.g_b) if inputs.x_b is not None else 0.0
    out["total"] = total_loss([out[k] for k in list(out)[:6]], weights)
    return out
