"""Instance-level probabilistic delegate sampling.

A delegate is drawn from the k nearest gallery items with the exponential
mechanism, ``P(i) ~ exp(eps * u_i / (2 * sensitivity))``. Two utilities are
provided: ``appearance`` favours near candidates, ``geometry`` favours far
ones. Both are range-normalised to [0, 1], so a sensitivity of 1 is a valid
bound.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np

from .errors import AllTiedWarning, InsufficientCandidates


@dataclass(frozen=True)
class GalleryItem:
    id: str
    embedding: np.ndarray
    landmarks: Any = None  # LandmarkSet | None
    pose: tuple[float, float, float] | None = None
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        emb = np.asarray(self.embedding, dtype=np.float32)
        if emb.ndim != 1 or not np.all(np.isfinite(emb)):
            raise ValueError(f"gallery item {self.id!r}: embedding must be a finite vector")
        object.__setattr__(self, "embedding", emb)


@dataclass(frozen=True)
class CandidateSet:
    query: Any
    items: tuple[GalleryItem, ...]
    distances: np.ndarray
    indices: tuple[int, ...] = ()

    def __post_init__(self):
        if len(self.items) != len(self.distances):
            raise ValueError("items and distances differ in length")

    def __len__(self):
        return len(self.items)


@dataclass(frozen=True)
class DpConfig:
    epsilon: float = 1.0
    sensitivity: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be > 0, got {self.epsilon}")
        if not self.sensitivity > 0:
            raise ValueError(f"sensitivity must be > 0, got {self.sensitivity}")


def _range_normalised(distances) -> tuple[np.ndarray, float, float] | None:
    d = np.asarray(distances, dtype=np.float64)
    if d.ndim != 1 or d.size < 2:
        raise ValueError(f"need at least 2 distances, got {d.size}")
    if np.any(d < 0) or not np.all(np.isfinite(d)):
        raise ValueError("distances must be finite and non-negative")
    lo, hi = float(d.min()), float(d.max())
    if hi == lo:
        warnings.warn("all candidate distances are tied; using utility 0.5", AllTiedWarning, stacklevel=3)
        return None
    return d, lo, hi


def utility_appearance(distances) -> np.ndarray:
    """(max - d_i) / (max - min): nearest candidate 1, farthest 0."""
    r = _range_normalised(distances)
    if r is None:
        return np.full(len(distances), 0.5)
    d, lo, hi = r
    return np.clip((hi - d) / (hi - lo), 0.0, 1.0)


def utility_geometry(distances) -> np.ndarray:
    """(d_i - min) / (max - min): farthest candidate 1, nearest 0."""
    r = _range_normalised(distances)
    if r is None:
        return np.full(len(distances), 0.5)
    d, lo, hi = r
    return np.clip((d - lo) / (hi - lo), 0.0, 1.0)


def utility_uniform(distances) -> np.ndarray:
    """Constant utility; the mechanism degenerates to uniform sampling."""
    return np.full(len(distances), 0.5)


UTILITIES: dict[str, Callable[[Sequence[float]], np.ndarray]] = {
    "appearance": utility_appearance,
    "geometry": utility_geometry,
    "uniform": utility_uniform,
}


def delegate_probabilities(utilities, cfg: DpConfig) -> np.ndarray:
    u = np.asarray(utilities, dtype=np.float64)
    if u.ndim != 1 or u.size == 0 or not np.all(np.isfinite(u)):
        raise ValueError("utilities must be a non-empty finite vector")
    z = cfg.epsilon * u / (2.0 * cfg.sensitivity)
    e = np.exp(z - z.max())
    return e / e.sum()


def sample_indices(probs, n: int, rng: np.random.Generator) -> np.ndarray:
    """Inverse-CDF draws of ``n`` indices."""
    cdf = np.cumsum(np.asarray(probs, dtype=np.float64))
    cdf[-1] = 1.0
    return np.searchsorted(cdf, rng.random(n), side="right")


def sample_delegate(
    candidates: CandidateSet, utilities, cfg: DpConfig, rng: np.random.Generator | None = None
) -> tuple[GalleryItem, float, int]:
    """Draw one delegate. Returns ``(item, probability, index into candidates)``."""
    if len(candidates) == 0:
        raise InsufficientCandidates("empty candidate set")
    if len(utilities) != len(candidates):
        raise ValueError(f"{len(utilities)} utilities for {len(candidates)} candidates")
    p = delegate_probabilities(utilities, cfg)
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    i = int(sample_indices(p, 1, rng)[0])
    return candidates.items[i], float(p[i]), i


def item_seed(seed: int, index: int) -> int:
    return int(seed) ^ int(index)


def l2_distances(query, gallery: Sequence[GalleryItem]) -> np.ndarray:
    q = np.asarray(query, dtype=np.float64)
    emb = np.stack([np.asarray(g.embedding, dtype=np.float64) for g in gallery])
    if emb.shape[1] != q.shape[0]:
        raise ValueError(f"query dim {q.shape[0]} does not match gallery dim {emb.shape[1]}")
    return np.sqrt(np.sum((emb - q) ** 2, axis=1))


def build_candidate_set(
    query,
    gallery: Sequence[GalleryItem],
    k: int,
    metric: str | Callable[[Any, Sequence[GalleryItem]], np.ndarray] = "l2",
    pose_filter: Callable[[GalleryItem], bool] | None = None,
    exclude_id: str | None = None,
) -> CandidateSet:
    """Exact k-NN over ``gallery`` with stable tie-breaking by gallery order.

    ``metric`` is ``"l2"`` (embedding distance) or a callable returning one
    distance per gallery item. Items with ``id == exclude_id`` and items
    rejected by ``pose_filter`` are removed before ranking.
    """
    if k < 2:
        raise ValueError(f"k must be >= 2, got {k}")
    eligible = [
        i for i, g in enumerate(gallery)
        if (exclude_id is None or g.id != exclude_id) and (pose_filter is None or pose_filter(g))
    ]
    if len(eligible) < 2 or len(eligible) < k:
        raise InsufficientCandidates(f"{len(eligible)} eligible candidates for k={k} (need >= max(2, k))")
    pool = [gallery[i] for i in eligible]
    dist_fn = l2_distances if metric == "l2" else metric
    if not callable(dist_fn):
        raise ValueError(f"unknown metric {metric!r}")
    d = np.asarray(dist_fn(query, pool), dtype=np.float64)
    order = np.argsort(d, kind="stable")[:k]
    return CandidateSet(
        query=query,
        items=tuple(pool[i] for i in order),
        distances=d[order],
        indices=tuple(eligible[i] for i in order),
    )


@dataclass(frozen=True)
class SampleAudit:
    candidate_ids: list[str]
    candidate_indices: list[int]
    distances: list[float]
    utilities: list[float]
    probabilities: list[float]
    chosen: int
    chosen_id: str
    epsilon: float
    sensitivity: float
    utility: str

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def ipd_sample(
    candidates: CandidateSet, utility: str, cfg: DpConfig, rng: np.random.Generator | None = None
) -> tuple[GalleryItem, SampleAudit]:
    u = UTILITIES[utility](candidates.distances)
    item, _, idx = sample_delegate(candidates, u, cfg, rng)
    audit = SampleAudit(
        candidate_ids=[g.id for g in candidates.items],
        candidate_indices=list(candidates.indices),
        distances=[float(x) for x in candidates.distances],
        utilities=[float(x) for x in u],
        probabilities=[float(x) for x in delegate_probabilities(u, cfg)],
        chosen=idx,
        chosen_id=item.id,
        epsilon=cfg.epsilon,
        sensitivity=cfg.sensitivity,
        utility=utility,
    )
    return item, audit
