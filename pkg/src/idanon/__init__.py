"""Identity anonymization toolkit: attention distraction, DP delegate sampling and geometry anonymization."""

from .classifier import MiniNet, Prediction, forward
from .errors import DegenerateAlpha, DegenerateLandmarks, IdAnonError, InsufficientCandidates, ShapeError
from .ifa import DistractionConfig, distract, recast_identity
from .ipd import DpConfig, GalleryItem, build_candidate_set, ipd_sample
from .landmarks import LandmarkSet
from .pipeline import RunConfig, run_pipeline, sweep_k

__all__ = [
    "DegenerateAlpha", "DegenerateLandmarks", "DistractionConfig", "DpConfig", "GalleryItem",
    "IdAnonError", "InsufficientCandidates", "LandmarkSet", "MiniNet", "Prediction", "RunConfig",
    "ShapeError", "build_candidate_set", "distract", "forward", "ipd_sample", "recast_identity",
    "run_pipeline", "sweep_k",
]
