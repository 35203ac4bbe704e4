"""Geometry structure anonymization.

A delegate landmark set is sampled from same-pose gallery items with the
geometry utility (far structures preferred), aligned onto the original, and
then has the original's contour and mouth opening put back while keeping
the delegate's own lip thickness.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from matplotlib.path import Path as _Polygon

from .errors import InsufficientCandidates
from .ipd import DpConfig, GalleryItem, build_candidate_set, ipd_sample
from .landmarks import (
    GROUPS,
    INNER_LIP_PAIRS,
    OUTER_TO_INNER,
    LandmarkSet,
    estimate_pose,
    pose_bucket,
    procrustes,
    procrustes_align,
)


@dataclass(frozen=True)
class GeometryInput:
    structure: LandmarkSet
    background_mask: np.ndarray  # (H, W) uint8, 1 = background

    def __post_init__(self):
        m = np.asarray(self.background_mask)
        if m.ndim != 2:
            raise ValueError(f"background mask must be 2D, got shape {m.shape}")
        if not np.isin(m, (0, 1)).all():
            raise ValueError("background mask must be binary")
        object.__setattr__(self, "background_mask", m.astype(np.uint8))


def face_polygon(s: LandmarkSet) -> np.ndarray:
    """Contour followed by the brows in reverse, closing the face region."""
    p = s.points
    return np.vstack([p[GROUPS["contour"]], p[GROUPS["brows"]][::-1]])


def background_mask(s: LandmarkSet, shape: tuple[int, int]) -> np.ndarray:
    """1 outside the face polygon, 0 inside; ``shape`` is (H, W)."""
    h, w = shape
    yy, xx = np.mgrid[0:h, 0:w]
    centres = np.column_stack([xx.ravel() + 0.5, yy.ravel() + 0.5])
    inside = _Polygon(face_polygon(s)).contains_points(centres).reshape(h, w)
    return (~inside).astype(np.uint8)


def recover_pose_expression(original: LandmarkSet, delegate: LandmarkSet, align: bool = True) -> LandmarkSet:
    """Build S_hat from the (aligned) delegate.

    1. contour points come from the original verbatim;
    2. each facing inner-lip pair of the delegate is moved vertically,
       symmetrically about its own midpoint, until its gap equals the
       original's;
    3. outer-lip points are re-attached to their inner-lip partner using the
       delegate's thickness vectors;
    4. everything else stays as in the delegate.
    """
    d = procrustes_align(delegate, original)[0].points if align else delegate.points
    thickness = {o: d[o] - d[i] for o, i in OUTER_TO_INNER.items()}
    s = d.copy()
    o = original.points
    s[GROUPS["contour"]] = o[GROUPS["contour"]]
    for up, lo in INNER_LIP_PAIRS:
        mid = 0.5 * (d[up, 1] + d[lo, 1])
        gap = o[lo, 1] - o[up, 1]
        s[up, 1] = mid - 0.5 * gap
        s[lo, 1] = mid + 0.5 * gap
    for outer, inner in OUTER_TO_INNER.items():
        s[outer] = s[inner] + thickness[outer]
    return LandmarkSet(s)


def structure_distances(query: LandmarkSet, pool: Sequence[GalleryItem]) -> np.ndarray:
    """l2 between the query and each item's landmarks aligned onto it."""
    out = np.empty(len(pool))
    for n, g in enumerate(pool):
        tf = procrustes(g.landmarks, query)
        out[n] = np.linalg.norm(tf.apply(g.landmarks.points) - query.points)
    return out


def item_pose_bucket(item: GalleryItem) -> tuple[int, int, int]:
    if item.pose is not None:
        return pose_bucket(item.pose)
    return pose_bucket(estimate_pose(item.landmarks))


@dataclass(frozen=True)
class GeometryAudit:
    query_pose_bucket: tuple[int, int, int]
    sample: dict
    transform: dict
    delegate_id: str
    extra: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "query_pose_bucket": list(self.query_pose_bucket),
            "delegate_id": self.delegate_id,
            "transform": self.transform,
            **self.sample,
            **self.extra,
        }


def anonymize_geometry(
    s: LandmarkSet,
    gallery: Sequence[GalleryItem],
    k: int,
    cfg: DpConfig,
    mask=None,
    *,
    query_id: str | None = None,
    query_pose=None,
    image_shape: tuple[int, int] = (256, 256),
    rng: np.random.Generator | None = None,
    utility: str = "geometry",
) -> tuple[GeometryInput, str, GeometryAudit]:
    """Sample a same-pose delegate structure and recover pose/expression.

    Returns ``(Z_g, delegate_id, audit)``. When ``mask`` is None the
    background mask is derived from the original landmarks. ``utility``
    names an entry of ``ipd.UTILITIES``; ablations pass ``"uniform"``.
    """
    missing = [g.id for g in gallery if g.landmarks is None]
    if missing and len(missing) == len(gallery):
        raise InsufficientCandidates("no gallery item carries landmarks")
    bucket = pose_bucket(query_pose if query_pose is not None else estimate_pose(s))
    cands = build_candidate_set(
        s,
        gallery,
        k,
        metric=structure_distances,
        pose_filter=lambda g: g.landmarks is not None and item_pose_bucket(g) == bucket,
        exclude_id=query_id,
    )
    item, sample_audit = ipd_sample(cands, utility, cfg, rng)
    aligned, tf = procrustes_align(item.landmarks, s)
    s_hat = recover_pose_expression(s, aligned, align=False)
    if mask is None:
        mask = background_mask(s, image_shape)
    audit = GeometryAudit(
        query_pose_bucket=bucket,
        sample=sample_audit.as_dict(),
        transform=tf.as_dict(),
        delegate_id=item.id,
        extra={"skipped_without_landmarks": missing},
    )
    return GeometryInput(s_hat, mask), item.id, audit


def to_svg(layers: dict[str, LandmarkSet], size: tuple[int, int] = (256, 256)) -> str:
    """Debug overlay: one coloured dot layer per landmark set."""
    colours = ("#d62728", "#1f77b4", "#2ca02c", "#ff7f0e", "#9467bd")
    w, h = size
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">',
           f'<rect width="{w}" height="{h}" fill="white"/>']
    for n, (name, s) in enumerate(layers.items()):
        c = colours[n % len(colours)]
        out.append(f'<g id="{name}" fill="{c}">')
        out.extend(f'<circle cx="{x:.2f}" cy="{y:.2f}" r="1.5"/>' for x, y in s.points)
        out.append("</g>")
    out.append("</svg>")
    return "\n".join(out) + "\n"
