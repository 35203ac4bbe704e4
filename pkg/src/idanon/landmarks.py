"""68-point facial landmark sets (iBUG layout), Procrustes alignment and pose.

Image coordinates: x grows to the right, y grows downward. The synthetic
3D template used for fixtures and pose estimation lives in a face frame
with x to the image right, y up and z toward the camera.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateLandmarks

N_POINTS = 68

GROUPS: dict[str, range] = {
    "contour": range(0, 17),
    "brows": range(17, 27),
    "nose": range(27, 36),
    "eyes": range(36, 48),
    "outer_lip": range(48, 60),
    "inner_lip": range(60, 68),
}

# (upper, lower) inner-lip pairs facing each other across the mouth opening
INNER_LIP_PAIRS = ((61, 67), (62, 66), (63, 65))
# outer-lip point -> inner-lip point it is measured against for lip thickness
OUTER_TO_INNER = {
    48: 60, 49: 61, 50: 61, 51: 62, 52: 63, 53: 63,
    54: 64, 55: 65, 56: 65, 57: 66, 58: 67, 59: 67,
}
# nose tip, nose bridge, outer eye corners, mouth corners; the chin is left out
# because it moves with mouth opening and would read as pitch
POSE_POINTS = (30, 27, 36, 45, 48, 54)
POSE_BIN_DEG = 15.0


@dataclass(frozen=True)
class LandmarkSet:
    points: np.ndarray
    bounds: tuple[float, float] | None = field(default=None, compare=False)

    def __post_init__(self):
        p = np.array(self.points, dtype=np.float64)
        if p.shape != (N_POINTS, 2):
            raise ValueError(f"expected {N_POINTS} (x, y) points, got shape {p.shape}")
        if not np.all(np.isfinite(p)):
            raise ValueError("landmarks must be finite")
        if self.bounds is not None:
            w, h = self.bounds
            if np.any(p < 0) or np.any(p[:, 0] > w) or np.any(p[:, 1] > h):
                raise ValueError(f"landmarks fall outside image bounds {self.bounds}")
        if mouth_opening(p) < -1e-9:
            raise ValueError("mouth opening is negative (inner lips cross)")
        p.flags.writeable = False
        object.__setattr__(self, "points", p)

    def group(self, name: str) -> np.ndarray:
        return self.points[GROUPS[name]]

    def to_list(self) -> list[list[float]]:
        return self.points.tolist()


def _pts(s) -> np.ndarray:
    return s.points if isinstance(s, LandmarkSet) else np.asarray(s, dtype=np.float64)


def inner_lip_gaps(s) -> np.ndarray:
    """Vertical gap (lower minus upper y) for each facing inner-lip pair."""
    p = _pts(s)
    return np.array([p[lo, 1] - p[up, 1] for up, lo in INNER_LIP_PAIRS])


def mouth_opening(s) -> float:
    return float(inner_lip_gaps(s).mean())


def lip_thickness(s) -> np.ndarray:
    """Outer-lip minus matching inner-lip points, shape ``(12, 2)``."""
    p = _pts(s)
    return np.array([p[o] - p[i] for o, i in OUTER_TO_INNER.items()])


@dataclass(frozen=True)
class Similarity:
    """x -> scale * R(angle) x + translation."""
    scale: float
    angle: float  # radians
    translation: np.ndarray

    @property
    def rotation(self) -> np.ndarray:
        c, s = math.cos(self.angle), math.sin(self.angle)
        return np.array([[c, -s], [s, c]])

    def apply(self, pts) -> np.ndarray:
        return self.scale * np.asarray(pts, dtype=np.float64) @ self.rotation.T + self.translation

    def as_dict(self) -> dict:
        return {"scale": self.scale, "angle_deg": math.degrees(self.angle),
                "translation": [float(v) for v in self.translation]}


def procrustes(src, dst) -> Similarity:
    """Least-squares similarity transform mapping ``src`` onto ``dst`` (Umeyama, no reflection)."""
    x, y = _pts(src), _pts(dst)
    mx, my = x.mean(axis=0), y.mean(axis=0)
    xc, yc = x - mx, y - my
    var = float(np.sum(xc ** 2))
    if var <= 1e-12:
        raise DegenerateLandmarks("source landmarks are all identical")
    # 2D closed form: optimal rotation from the summed dot and cross terms
    a = float(np.sum(xc * yc))
    b = float(np.sum(xc[:, 0] * yc[:, 1] - xc[:, 1] * yc[:, 0]))
    angle = math.atan2(b, a)
    scale = math.hypot(a, b) / var
    t = Similarity(scale, angle, np.zeros(2))
    return Similarity(scale, angle, my - t.apply(mx[None])[0])


def procrustes_align(src: LandmarkSet, dst: LandmarkSet) -> tuple[LandmarkSet, Similarity]:
    tf = procrustes(src, dst)
    return LandmarkSet(tf.apply(src.points)), tf


def procrustes_distance(src, dst) -> float:
    """l2 norm between ``dst`` and ``src`` after aligning ``src`` onto ``dst``."""
    tf = procrustes(src, dst)
    return float(np.linalg.norm(tf.apply(_pts(src)) - _pts(dst)))


# ---------------------------------------------------------------------------
# canonical 3D template


def _template() -> np.ndarray:
    p = np.zeros((N_POINTS, 3))
    for i in range(17):
        t = math.pi * i / 16
        p[i] = (-0.95 * math.cos(t), 0.30 - 1.35 * math.sin(t), -0.75 * (1 - math.sin(t)) - 0.15)
    for i in range(5):
        x = -0.80 + 0.16 * i
        p[17 + i] = (x, 0.58 + 0.08 * math.sin(math.pi * i / 4), 0.08)
        p[26 - i] = (-x, 0.58 + 0.08 * math.sin(math.pi * i / 4), 0.08)
    for i in range(4):
        p[27 + i] = (0.0, 0.38 - 0.18 * i, 0.22 + 0.11 * i)
    for i in range(5):
        p[31 + i] = (-0.20 + 0.10 * i, -0.28 + 0.04 * math.sin(math.pi * i / 4), 0.34 + 0.05 * math.sin(math.pi * i / 4))
    for base, cx in ((36, -0.45), (42, 0.45)):
        # iBUG order: corner, two upper, corner, two lower (clockwise in the image)
        xs = (-0.17, -0.06, 0.06, 0.17, 0.06, -0.06)
        ys = (0.0, 0.06, 0.06, 0.0, -0.05, -0.05)
        for j in range(6):
            p[base + j] = (cx + xs[j], 0.30 + ys[j], 0.12)
    outer = [(-0.36, -0.62), (-0.22, -0.53), (-0.09, -0.49), (0.0, -0.51), (0.09, -0.49), (0.22, -0.53),
             (0.36, -0.62), (0.23, -0.73), (0.11, -0.78), (0.0, -0.79), (-0.11, -0.78), (-0.23, -0.73)]
    for j, (x, y) in enumerate(outer):
        p[48 + j] = (x, y, 0.30 - 0.25 * abs(x))
    inner = [(-0.28, -0.62), (-0.10, -0.59), (0.0, -0.595), (0.10, -0.59),
             (0.28, -0.62), (0.10, -0.59), (0.0, -0.595), (-0.10, -0.59)]
    for j, (x, y) in enumerate(inner):
        p[60 + j] = (x, y, 0.30 - 0.25 * abs(x))
    return p


TEMPLATE_3D = _template()
TEMPLATE_3D.flags.writeable = False


def rotation_matrix(yaw: float, pitch: float, roll: float) -> np.ndarray:
    """R = Rz(roll) @ Rx(pitch) @ Ry(yaw), angles in degrees."""
    y, p, r = (math.radians(v) for v in (yaw, pitch, roll))
    ry = np.array([[math.cos(y), 0, math.sin(y)], [0, 1, 0], [-math.sin(y), 0, math.cos(y)]])
    rx = np.array([[1, 0, 0], [0, math.cos(p), -math.sin(p)], [0, math.sin(p), math.cos(p)]])
    rz = np.array([[math.cos(r), -math.sin(r), 0], [math.sin(r), math.cos(r), 0], [0, 0, 1]])
    return rz @ rx @ ry


def euler_from_rotation(rot: np.ndarray) -> tuple[float, float, float]:
    """Inverse of :func:`rotation_matrix` (degrees)."""
    pitch = math.asin(max(-1.0, min(1.0, rot[2, 1])))
    yaw = math.atan2(-rot[2, 0], rot[2, 2])
    roll = math.atan2(-rot[0, 1], rot[1, 1])
    return math.degrees(yaw), math.degrees(pitch), math.degrees(roll)


def project(points3d, yaw=0.0, pitch=0.0, roll=0.0, scale=80.0, center=(128.0, 128.0)) -> np.ndarray:
    """Scaled orthographic projection to image coordinates (y down)."""
    q = np.asarray(points3d, dtype=np.float64) @ rotation_matrix(yaw, pitch, roll).T
    return np.column_stack([center[0] + scale * q[:, 0], center[1] - scale * q[:, 1]])


def estimate_pose(s) -> tuple[float, float, float]:
    """(yaw, pitch, roll) in degrees from six landmarks and the 3D template.

    Fits a weak-perspective camera ``x = s * P @ R @ X + t`` to the pose
    points by linear least squares, then projects the 2x3 block onto the
    nearest scaled rotation.
    """
    p = _pts(s)[list(POSE_POINTS)].copy()
    p[:, 1] = -p[:, 1]
    X = TEMPLATE_3D[list(POSE_POINTS)]
    Xc = X - X.mean(axis=0)
    pc = p - p.mean(axis=0)
    m, *_ = np.linalg.lstsq(Xc, pc, rcond=None)  # (3, 2)
    m = m.T
    r1 = m[0] / np.linalg.norm(m[0])
    r2 = m[1] - (m[1] @ r1) * r1
    r2 /= np.linalg.norm(r2)
    rot = np.vstack([r1, r2, np.cross(r1, r2)])
    u, _, vt = np.linalg.svd(rot)
    return euler_from_rotation(u @ vt)


def pose_bucket(pose, bin_deg: float = POSE_BIN_DEG) -> tuple[int, int, int]:
    """Quantise (yaw, pitch, roll) to bins of ``bin_deg`` centred on multiples of ``bin_deg``."""
    return tuple(int(math.floor(v / bin_deg + 0.5)) for v in pose)


# ---------------------------------------------------------------------------
# synthetic faces


@dataclass(frozen=True)
class FaceParams:
    shape: np.ndarray  # (68, 3) per-point offsets on top of the template
    mouth_open: float = 0.0
    yaw: float = 0.0
    pitch: float = 0.0
    roll: float = 0.0
    scale: float = 80.0
    center: tuple[float, float] = (128.0, 128.0)


def random_shape(rng: np.random.Generator, strength: float = 1.0) -> np.ndarray:
    """Identity-specific geometry offsets: group-wise stretches plus per-point jitter."""
    off = np.zeros((N_POINTS, 3))
    base = TEMPLATE_3D
    # vertical proportions vary less than widths; they are what pitch estimation confuses
    jaw_w = rng.normal(0, 0.06) * strength
    face_l = rng.normal(0, 0.02) * strength
    off[GROUPS["contour"], 0] += base[GROUPS["contour"], 0] * jaw_w
    off[GROUPS["contour"], 1] += (base[GROUPS["contour"], 1] - 0.3) * face_l
    eye_gap = rng.normal(0, 0.04) * strength
    eye_h = rng.normal(0, 0.015) * strength
    for g, sign in ((range(36, 42), -1), (range(42, 48), 1)):
        off[g, 0] += sign * eye_gap
        off[g, 1] += eye_h
    off[GROUPS["brows"], 1] += rng.normal(0, 0.03) * strength
    nose_l = rng.normal(0, 0.01) * strength
    nose_w = rng.normal(0, 0.05) * strength
    off[27:31, 1] += np.linspace(0, -nose_l, 4)
    off[31:36, 0] += base[31:36, 0] * nose_w * 2
    off[31:36, 1] -= nose_l
    mouth_w, lip_t = rng.normal(0, 0.05, 2) * strength
    off[48:68, 0] += base[48:68, 0] * mouth_w
    lip_t = abs(lip_t)
    off[49:54, 1] += lip_t
    off[55:60, 1] -= lip_t
    off += rng.normal(0, 0.004 * strength, off.shape)
    # a closed mouth has coincident inner-lip pairs, so zero opening survives any pose
    for up, lo in INNER_LIP_PAIRS:
        off[lo] = off[up]
    return off


def synth_points3d(params: FaceParams) -> np.ndarray:
    p = TEMPLATE_3D + params.shape
    d = params.mouth_open
    if d:
        p = p.copy()
        # lower lip and chin drop; contour follows with a falloff toward the ears
        p[[65, 66, 67], 1] -= d
        p[55:60, 1] -= d
        for i in range(17):
            p[i, 1] -= d * math.sin(math.pi * i / 16) ** 2
    return p


def synth_landmarks(params: FaceParams) -> LandmarkSet:
    pts = project(synth_points3d(params), params.yaw, params.pitch, params.roll,
                  params.scale, params.center)
    return LandmarkSet(pts)
