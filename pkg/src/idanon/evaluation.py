"""Privacy and utility metrics over fixture embeddings.

Conventions (the published numbers depend on them):

* ReID: an anonymized embedding is re-identified when it verifies against
  at least one gallery embedding carrying the record's own identity.
* IDS: an anonymized embedding swaps identity when it verifies against at
  least one gallery embedding of a *different* identity.

Records without any usable gallery entry for a rate are skipped (with a
warning) and excluded from that rate's denominator.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import SkippedRecordWarning

REFERENCE_THRESHOLDS: tuple[tuple[str, float], ...] = (
    ("cosine", 0.30),
    ("cosine", 0.35),
    ("l2", 0.9),
    ("l2", 1.0),
    ("l2", 1.1),
)


@dataclass(frozen=True)
class VerificationConfig:
    metric: str = "cosine"
    threshold: float = 0.30

    def __post_init__(self):
        if self.metric not in ("cosine", "l2"):
            raise ValueError(f"metric must be 'cosine' or 'l2', got {self.metric!r}")

    @property
    def label(self) -> str:
        return f"cos>{self.threshold:.2f}" if self.metric == "cosine" else f"l2<{self.threshold:.1f}"


def reference_configs() -> list[VerificationConfig]:
    return [VerificationConfig(m, t) for m, t in REFERENCE_THRESHOLDS]


@dataclass(frozen=True)
class EvalRecord:
    source_id: str
    original: np.ndarray
    anonymized: np.ndarray
    attributes_original: Mapping[str, str] = field(default_factory=dict)
    attributes_anonymized: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        o = np.asarray(self.original, dtype=np.float64)
        a = np.asarray(self.anonymized, dtype=np.float64)
        if o.shape != a.shape or o.ndim != 1:
            raise ValueError(f"record {self.source_id!r}: embeddings must be vectors of equal length")
        object.__setattr__(self, "original", o)
        object.__setattr__(self, "anonymized", a)


def verify(a, b, cfg: VerificationConfig) -> bool:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch {a.shape} vs {b.shape}")
    if cfg.metric == "cosine":
        na, nb = np.linalg.norm(a), np.linalg.norm(b)
        if na == 0 or nb == 0:
            raise ValueError("cosine similarity of a zero vector is undefined")
        return bool(a @ b / (na * nb) > cfg.threshold)
    return bool(np.linalg.norm(a - b) < cfg.threshold)


def _match_matrix(queries: np.ndarray, gallery: np.ndarray, cfg: VerificationConfig) -> np.ndarray:
    if cfg.metric == "cosine":
        qn = np.linalg.norm(queries, axis=1)
        gn = np.linalg.norm(gallery, axis=1)
        if np.any(qn == 0) or np.any(gn == 0):
            raise ValueError("cosine similarity of a zero vector is undefined")
        return (queries @ gallery.T) / np.outer(qn, gn) > cfg.threshold
    # direct differences rather than the |a|^2 + |b|^2 - 2ab expansion, which loses precision
    d = np.linalg.norm(queries[:, None, :] - gallery[None, :, :], axis=2)
    return d < cfg.threshold


@dataclass(frozen=True)
class RateReport:
    reid: float
    ids: float
    reid_counted: int
    ids_counted: int
    skipped_reid: tuple[str, ...] = ()
    skipped_ids: tuple[str, ...] = ()

    def as_dict(self) -> dict:
        return {
            "reid": self.reid, "ids": self.ids,
            "reid_counted": self.reid_counted, "ids_counted": self.ids_counted,
            "skipped_reid": list(self.skipped_reid), "skipped_ids": list(self.skipped_ids),
        }


def _pct(hits: int, n: int) -> float:
    return 100.0 * hits / n if n else 0.0


def match_rates(records: Sequence[EvalRecord], gallery: Sequence, cfg: VerificationConfig) -> RateReport:
    """ReID and IDS rates in one pass.

    ``gallery`` is a sequence of objects with ``id`` and ``embedding``
    attributes, or of ``(id, embedding)`` pairs.
    """
    if not records:
        raise ValueError("no records to evaluate")
    ids, emb = _gallery_arrays(gallery)
    q = np.stack([r.anonymized for r in records])
    if q.shape[1] != emb.shape[1]:
        raise ValueError(f"record dim {q.shape[1]} does not match gallery dim {emb.shape[1]}")
    m = _match_matrix(q, emb, cfg)
    reid_hits = ids_hits = reid_n = ids_n = 0
    skip_reid, skip_ids = [], []
    for r, row in zip(records, m):
        same = ids == r.source_id
        if same.any():
            reid_n += 1
            reid_hits += bool(row[same].any())
        else:
            skip_reid.append(r.source_id)
        if (~same).any():
            ids_n += 1
            ids_hits += bool(row[~same].any())
        else:
            skip_ids.append(r.source_id)
    if skip_reid:
        warnings.warn(f"{len(skip_reid)} record(s) have no same-identity gallery entry", SkippedRecordWarning,
                      stacklevel=2)
    return RateReport(_pct(reid_hits, reid_n), _pct(ids_hits, ids_n), reid_n, ids_n,
                      tuple(skip_reid), tuple(skip_ids))


def _gallery_arrays(gallery) -> tuple[np.ndarray, np.ndarray]:
    ids, vecs = [], []
    for g in gallery:
        if isinstance(g, tuple):
            gid, e = g
        else:
            gid, e = g.id, g.embedding
        ids.append(str(gid))
        vecs.append(np.asarray(e, dtype=np.float64))
    if not vecs:
        raise ValueError("empty gallery")
    return np.array(ids, dtype=object), np.stack(vecs)


def reid_rate(records, gallery, cfg: VerificationConfig) -> float:
    return match_rates(records, gallery, cfg).reid


def ids_rate(records, gallery, cfg: VerificationConfig) -> float:
    ids, _ = _gallery_arrays(gallery)
    if len(set(ids)) < 2:
        raise ValueError("IDS needs a gallery with at least two identities")
    return match_rates(records, gallery, cfg).ids


def attribute_agreement(records: Sequence[EvalRecord], names: Iterable[str]) -> tuple[dict[str, float], list[str]]:
    """Per-attribute percentage of records whose label survived anonymization.

    Returns ``(rates, notes)``; records missing an attribute are left out of
    that attribute's rate and mentioned in ``notes``.
    """
    rates, notes = {}, []
    for name in names:
        pairs = [(r.attributes_original[name], r.attributes_anonymized[name]) for r in records
                 if name in r.attributes_original and name in r.attributes_anonymized]
        missing = len(records) - len(pairs)
        if missing:
            notes.append(f"{name}: {missing} record(s) lack the attribute")
        if pairs:
            rates[name] = 100.0 * sum(a == b for a, b in pairs) / len(pairs)
        else:
            notes.append(f"{name}: excluded, no record carries it")
    return rates, notes


def threshold_table(records, gallery, configs: Sequence[VerificationConfig] | None = None) -> list[dict]:
    """One row per threshold configuration with the (ReID, IDS) cell."""
    rows = []
    for cfg in configs or reference_configs():
        rep = match_rates(records, gallery, cfg)
        rows.append({"metric": cfg.metric, "threshold": cfg.threshold, "label": cfg.label,
                     "reid": rep.reid, "ids": rep.ids, "cell": f"({rep.reid:.1f}, {rep.ids:.1f})"})
    return rows
