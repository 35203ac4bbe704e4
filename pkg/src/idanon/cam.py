"""Grad-CAM importance weights and heatmaps at conv resolution."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .classifier import MiniNet, grad_wrt_activation
from .errors import ShapeError


@dataclass(frozen=True)
class CamResult:
    alpha: np.ndarray
    heatmap: np.ndarray
    class_idx: int


def neuron_importance(net: MiniNet, a, class_idx: int) -> np.ndarray:
    """alpha_j = mean over (k, l) of d y^c / d A^j_kl."""
    g = grad_wrt_activation(net, a, class_idx)
    return g.mean(axis=(1, 2))


def weighted_map(a, alpha) -> np.ndarray:
    """sum_j alpha_j A^j as an ``(h, w)`` float64 map (no ReLU)."""
    a = np.asarray(a, dtype=np.float64)
    alpha = np.asarray(alpha, dtype=np.float64)
    if alpha.ndim != 1 or alpha.shape[0] != a.shape[0]:
        raise ShapeError(f"alpha has shape {alpha.shape}, activation has {a.shape[0]} channels")
    return (alpha @ a.reshape(a.shape[0], -1)).reshape(a.shape[1:])


def heatmap(a, alpha) -> np.ndarray:
    return np.maximum(weighted_map(a, alpha), 0.0)


def grad_cam(net: MiniNet, a, class_idx: int) -> CamResult:
    alpha = neuron_importance(net, a, class_idx)
    return CamResult(alpha=alpha, heatmap=heatmap(a, alpha), class_idx=class_idx)


def normalized_for_display(h) -> np.ndarray:
    """Scale a heatmap to [0, 1] by its max; an all-zero map stays zero."""
    h = np.asarray(h, dtype=np.float64)
    m = h.max() if h.size else 0.0
    return h / m if m > 0 else np.zeros_like(h)


def to_pgm(h) -> bytes:
    """Binary 8-bit PGM of a display-normalised heatmap."""
    img = np.round(normalized_for_display(h) * 255).astype(np.uint8)
    rows, cols = img.shape
    return f"P5\n{cols} {rows}\n255\n".encode() + img.tobytes()
