"""Identity feature anonymization by intrinsic attention distraction.

Given the last-conv activation ``A`` and the Grad-CAM weights ``alpha`` of a
class, the assistant matrix is the ``(h, w)`` map

    Phi = -(sum_j alpha_j A^j) / (sum_j alpha_j^2)

and ``xi^j = alpha_j * Phi`` removes the class-weighted evidence exactly:
``sum_j alpha_j (A^j + xi^j) = 0`` at every position. Two ways of combining
the top-K classes are offered:

``paper-sum``
    ``A_hat = A + sum_i w_i alpha_i^T Phi_i``. Each term nulls its own class,
    but non-orthogonal alphas interfere, so only K=1 is exact.
``exact-joint``
    The minimum-Frobenius-norm ``xi`` with ``alpha_i . A_hat = 0`` for all i.
    Per pixel this is minus the projection of ``A[:, k, l]`` onto
    ``span{alpha_i}``. Weights are ignored in this mode.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import tensor
from .cam import heatmap, neuron_importance, weighted_map
from .classifier import MiniNet, Prediction, forward, forward_from_activation
from .errors import DegenerateAlpha, SkippedClassWarning

MODES = ("paper-sum", "exact-joint")
DEGENERATE_EPS = 1e-12


@dataclass(frozen=True)
class DistractionConfig:
    k: int = 2
    weights: tuple[float, ...] | None = None
    mode: str = "paper-sum"
    bottom_j: int = 0
    bottom_weight: float = 1.0

    def __post_init__(self):
        if self.k < 1:
            raise ValueError(f"K must be >= 1, got {self.k}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.weights is not None:
            if len(self.weights) != self.k:
                raise ValueError(f"{len(self.weights)} weights given for K={self.k}")
            if any(w <= 0 for w in self.weights):
                raise ValueError("weights must be positive")
            object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        if self.bottom_j < 0:
            raise ValueError("bottom_j must be >= 0")

    @property
    def class_weights(self) -> tuple[float, ...]:
        return self.weights if self.weights is not None else (1.0,) * self.k


@dataclass(frozen=True)
class DistractionResult:
    a_hat: np.ndarray
    xi: np.ndarray
    classes: tuple[int, ...]
    alphas: np.ndarray
    phi: dict[int, np.ndarray]
    residuals: np.ndarray
    relative_residuals: np.ndarray
    distracted_heatmaps: np.ndarray
    fresh_heatmaps: np.ndarray
    recast_feature: np.ndarray
    logits_before: np.ndarray
    logits_after: np.ndarray
    skipped: tuple[int, ...] = ()
    bottom_classes: tuple[int, ...] = ()
    mode: str = "paper-sum"

    def summary(self) -> dict:
        """JSON-friendly view (no large tensors)."""
        return {
            "mode": self.mode,
            "classes": list(self.classes),
            "bottom_classes": list(self.bottom_classes),
            "skipped": list(self.skipped),
            "residuals": [float(r) for r in self.residuals],
            "relative_residuals": [float(r) for r in self.relative_residuals],
            "logits_before": [float(v) for v in self.logits_before],
            "logits_after": [float(v) for v in self.logits_after],
            "recast_feature": [float(v) for v in self.recast_feature],
            "xi_frobenius": float(np.linalg.norm(np.asarray(self.xi, dtype=np.float64))),
        }


def assistant_matrix(a, alpha) -> np.ndarray:
    alpha = np.asarray(alpha, dtype=np.float64)
    norm_sq = float(alpha @ alpha)
    if norm_sq <= DEGENERATE_EPS:
        raise DegenerateAlpha(norm_sq)
    return -weighted_map(a, alpha) / norm_sq


def _joint_projection(a64: np.ndarray, alphas: np.ndarray) -> np.ndarray:
    """-(projection of every pixel's channel vector onto span(alphas))."""
    _, s, vt = np.linalg.svd(alphas, full_matrices=False)
    rank = int(np.sum(s > s[0] * 1e-12)) if s.size else 0
    basis = vt[:rank]  # orthonormal rows spanning the alphas
    flat = a64.reshape(a64.shape[0], -1)
    return -(basis.T @ (basis @ flat)).reshape(a64.shape)


def _relative(res: float, before: np.ndarray) -> float:
    return res / max(1.0, float(np.max(np.abs(before))))


def distract(net: MiniNet, a, pred: Prediction, cfg: DistractionConfig) -> DistractionResult:
    if cfg.k > net.n_classes:
        raise ValueError(f"K={cfg.k} exceeds the number of classes {net.n_classes}")
    if cfg.bottom_j > net.n_classes:
        raise ValueError(f"bottom_j={cfg.bottom_j} exceeds the number of classes {net.n_classes}")
    a64 = np.asarray(a, dtype=np.float64)
    classes = pred.top_k(cfg.k)
    bottom = tuple(c for c in pred.bottom_k(cfg.bottom_j) if c not in classes)

    alphas = {c: neuron_importance(net, a, c) for c in classes + bottom}
    usable, skipped, phi = [], [], {}
    for c in classes + bottom:
        try:
            phi[c] = assistant_matrix(a64, alphas[c])
            usable.append(c)
        except DegenerateAlpha as exc:
            exc.class_idx = c
            warnings.warn(f"skipping class {c}: {exc}", SkippedClassWarning, stacklevel=2)
            skipped.append(c)

    xi = np.zeros_like(a64)
    if cfg.mode == "paper-sum":
        w = dict(zip(classes, cfg.class_weights))
        for c in usable:
            wc = w.get(c, cfg.bottom_weight)
            xi += wc * alphas[c][:, None, None] * phi[c][None]
    elif usable:
        xi = _joint_projection(a64, np.stack([alphas[c] for c in usable]))

    a_hat = tensor.as_tensor(a64 + xi)
    xi32 = tensor.as_tensor(xi)

    residuals, rel = [], []
    dist_maps, fresh_maps = [], []
    for c in classes:
        before = weighted_map(a64, alphas[c])
        after = weighted_map(a_hat, alphas[c])
        r = float(np.max(np.abs(after)))
        residuals.append(r)
        rel.append(_relative(r, before))
        dist_maps.append(np.maximum(after, 0.0))
        fresh_maps.append(heatmap(a_hat, neuron_importance(net, a_hat, c)))

    pred_after, feature = forward_from_activation(net, a_hat)
    return DistractionResult(
        a_hat=a_hat,
        xi=xi32,
        classes=tuple(classes),
        alphas=np.stack([alphas[c] for c in classes]),
        phi=phi,
        residuals=np.array(residuals),
        relative_residuals=np.array(rel),
        distracted_heatmaps=np.stack(dist_maps),
        fresh_heatmaps=np.stack(fresh_maps),
        recast_feature=feature,
        logits_before=pred.logits,
        logits_after=pred_after.logits,
        skipped=tuple(skipped),
        bottom_classes=bottom,
        mode=cfg.mode,
    )


def recast_identity(net: MiniNet, image, cfg: DistractionConfig) -> tuple[np.ndarray, DistractionResult]:
    """forward -> distract -> head; returns the recast identity feature and the report."""
    a, pred = forward(net, image)
    result = distract(net, a, pred, cfg)
    return result.recast_feature, result
