"""A fixed miniature classification network.

Two conv stages (3x3, stride 2, pad 1, ReLU) produce the last-conv activation
``A`` of shape ``(J, h, w)``; the head is global average pooling followed by a
fully connected layer. Because the head is linear in ``A``, the gradient of a
class logit with respect to ``A`` is ``W[c, j] / (h * w)`` at every position.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor
from .errors import ShapeError

WEIGHT_NAMES = ("conv1_w", "conv1_b", "conv2_w", "conv2_b", "head_w", "head_b")


def conv2d(x: np.ndarray, w: np.ndarray, b: np.ndarray, stride: int = 2, pad: int = 1) -> np.ndarray:
    """Cross-correlation of a single ``(C, H, W)`` input; returns float64."""
    x = np.pad(np.asarray(x, dtype=np.float64), ((0, 0), (pad, pad), (pad, pad)))
    kh, kw = w.shape[2:]
    win = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(1, 2))
    win = win[:, ::stride, ::stride]
    c, oh, ow = win.shape[:3]
    cols = win.transpose(0, 3, 4, 1, 2).reshape(c * kh * kw, oh * ow)
    out = np.asarray(w, dtype=np.float64).reshape(w.shape[0], -1) @ cols
    return out.reshape(-1, oh, ow) + np.asarray(b, dtype=np.float64)[:, None, None]


@dataclass(frozen=True)
class Prediction:
    logits: np.ndarray
    softmax: np.ndarray
    ranking: tuple[int, ...]

    def top_k(self, k: int) -> tuple[int, ...]:
        return self.ranking[:k]

    def bottom_k(self, k: int) -> tuple[int, ...]:
        return self.ranking[len(self.ranking) - k:][::-1] if k > 0 else ()


def softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    e = np.exp(z - z.max())
    return e / e.sum()


def make_prediction(logits) -> Prediction:
    logits = np.asarray(logits, dtype=np.float64)
    p = softmax(logits)
    # stable sort on -p keeps the lower class index first on ties
    ranking = tuple(int(i) for i in np.argsort(-p, kind="stable"))
    return Prediction(logits=logits, softmax=p, ranking=ranking)


@dataclass(frozen=True)
class MiniNet:
    conv1_w: np.ndarray
    conv1_b: np.ndarray
    conv2_w: np.ndarray
    conv2_b: np.ndarray
    head_w: np.ndarray
    head_b: np.ndarray
    input_shape: tuple[int, int, int] = (3, 32, 32)
    seed: int | None = field(default=None, compare=False)

    @classmethod
    def random(
        cls,
        seed: int,
        *,
        input_shape: tuple[int, int, int] = (3, 32, 32),
        hidden: int = 8,
        channels: int = 8,
        n_classes: int = 16,
        zero_bias: bool = True,
        scale: float = 0.1,
    ) -> "MiniNet":
        """Seeded uniform(-scale, scale) initialisation of every weight."""
        rng = np.random.default_rng(seed)
        c_in = input_shape[0]

        def u(*shape):
            return tensor.as_tensor(rng.uniform(-scale, scale, size=shape))

        conv1_w, conv1_b = u(hidden, c_in, 3, 3), u(hidden)
        conv2_w, conv2_b = u(channels, hidden, 3, 3), u(channels)
        head_w = u(n_classes, channels)
        head_b = u(n_classes)
        if zero_bias:
            head_b = tensor.as_tensor(np.zeros(n_classes))
        return cls(conv1_w, conv1_b, conv2_w, conv2_b, head_w, head_b,
                   input_shape=tuple(input_shape), seed=seed)

    @property
    def n_classes(self) -> int:
        return self.head_w.shape[0]

    @property
    def channels(self) -> int:
        return self.head_w.shape[1]

    @property
    def activation_shape(self) -> tuple[int, int, int]:
        _, h, w = self.input_shape
        for _ in range(2):
            h, w = (h - 1) // 2 + 1, (w - 1) // 2 + 1
        return (self.channels, h, w)

    def with_head(self, head_w=None, head_b=None) -> "MiniNet":
        return MiniNet(
            self.conv1_w, self.conv1_b, self.conv2_w, self.conv2_b,
            self.head_w if head_w is None else tensor.as_tensor(head_w),
            self.head_b if head_b is None else tensor.as_tensor(head_b),
            input_shape=self.input_shape, seed=self.seed,
        )

    def save(self, directory: str | os.PathLike) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        manifest = {"input_shape": list(self.input_shape), "seed": self.seed, "tensors": {}}
        for name in WEIGHT_NAMES:
            arr = getattr(self, name)
            tensor.save(d / f"{name}.adt", arr)
            manifest["tensors"][name] = list(arr.shape)
        (d / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")

    @classmethod
    def load(cls, directory: str | os.PathLike) -> "MiniNet":
        d = Path(directory)
        manifest = json.loads((d / "manifest.json").read_text())
        arrays = {}
        for name, shape in manifest["tensors"].items():
            arr = tensor.load(d / f"{name}.adt")
            if list(arr.shape) != list(shape):
                raise ShapeError(f"{name}: manifest says {shape}, file has {list(arr.shape)}")
            arrays[name] = arr
        return cls(**arrays, input_shape=tuple(manifest["input_shape"]), seed=manifest.get("seed"))


def _check_activation(net: MiniNet, a) -> np.ndarray:
    a = np.asarray(a)
    if a.shape != net.activation_shape:
        raise ShapeError(f"activation shape {a.shape} does not match {net.activation_shape}")
    return a


def activations(net: MiniNet, image) -> tensor.Tensor:
    image = np.asarray(image)
    if image.shape != tuple(net.input_shape):
        raise ShapeError(f"image shape {image.shape} does not match {tuple(net.input_shape)}")
    h = np.maximum(conv2d(image, net.conv1_w, net.conv1_b), 0.0)
    a = np.maximum(conv2d(h, net.conv2_w, net.conv2_b), 0.0)
    return tensor.as_tensor(a)


def identity_feature(a) -> np.ndarray:
    """Global average pool of ``A`` (float64)."""
    return np.asarray(a, dtype=np.float64).mean(axis=(1, 2))


def head_logits(net: MiniNet, a) -> np.ndarray:
    a = _check_activation(net, a)
    f = identity_feature(a)
    return np.asarray(net.head_w, dtype=np.float64) @ f + np.asarray(net.head_b, dtype=np.float64)


def forward(net: MiniNet, image) -> tuple[tensor.Tensor, Prediction]:
    a = activations(net, image)
    return a, make_prediction(head_logits(net, a))


def forward_from_activation(net: MiniNet, a) -> tuple[Prediction, np.ndarray]:
    """Run only the GAP + FC head. Returns the prediction and the GAP feature."""
    a = _check_activation(net, a)
    return make_prediction(head_logits(net, a)), identity_feature(a)


def grad_wrt_activation(net: MiniNet, a, class_idx: int) -> np.ndarray:
    """Analytic d logit[class_idx] / dA, shape ``(J, h, w)`` (float64)."""
    a = _check_activation(net, a)
    if not 0 <= class_idx < net.n_classes:
        raise IndexError(f"class index {class_idx} out of range [0, {net.n_classes})")
    _, h, w = a.shape
    row = np.asarray(net.head_w[class_idx], dtype=np.float64) / (h * w)
    return np.broadcast_to(row[:, None, None], a.shape).copy()
