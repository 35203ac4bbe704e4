"""Dense float32 arrays and the ADT1 binary tensor format.

Tensors are plain ``numpy.ndarray`` objects with dtype float32, C-contiguous
(row-major). Reductions accumulate in float64 and are cast back.

ADT1 layout (all little-endian)::

    b"ADT1" | u32 ndim | ndim * u32 dims | prod(dims) * f32 payload
"""

from __future__ import annotations

import os
import struct
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from .errors import ShapeError

MAGIC = b"ADT1"
DTYPE = np.float32

Tensor = np.ndarray

_BINARY: dict[str, Callable[[np.ndarray, np.ndarray], np.ndarray]] = {
    "add": np.add,
    "sub": np.subtract,
    "mul": np.multiply,
    "max": np.maximum,
}


def as_tensor(x, *, check_finite: bool = True) -> Tensor:
    """Return ``x`` as a read-only, C-contiguous float32 array."""
    t = np.ascontiguousarray(x, dtype=DTYPE)
    if t.ndim and 0 in t.shape:
        raise ShapeError(f"tensor dimensions must be positive, got {t.shape}")
    if check_finite and not np.all(np.isfinite(t)):
        raise ValueError("tensor contains NaN or Inf")
    if t.flags.writeable and t is x:
        t = t.copy()
    t.flags.writeable = False
    return t


def relu(a) -> Tensor:
    a = np.asarray(a, dtype=DTYPE)
    return np.maximum(a, DTYPE(0))


def elementwise(op: str, a, b=None) -> Tensor:
    """Apply ``op`` in {add, sub, mul, max, relu} elementwise.

    ``b`` must match ``a``'s shape exactly or be a scalar; no other
    broadcasting is performed.
    """
    a = np.asarray(a, dtype=DTYPE)
    if op == "relu":
        return relu(a)
    if op not in _BINARY:
        raise ValueError(f"unknown elementwise op {op!r}")
    if b is None:
        raise ValueError(f"op {op!r} needs two operands")
    b = np.asarray(b, dtype=DTYPE)
    if b.ndim != 0 and b.shape != a.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")
    return _BINARY[op](a, b).astype(DTYPE)


def reduce(op: str, a, axes: int | Iterable[int] | None = None) -> Tensor:
    """Sum or mean over ``axes`` (all axes when None), accumulated in float64."""
    a = np.asarray(a)
    if axes is not None:
        axes = (axes,) if isinstance(axes, int) else tuple(axes)
        for ax in axes:
            if not -a.ndim <= ax < a.ndim:
                raise ValueError(f"invalid axis {ax} for tensor of rank {a.ndim}")
    if op == "sum":
        out = np.sum(a, axis=axes, dtype=np.float64)
    elif op == "mean":
        out = np.mean(a, axis=axes, dtype=np.float64)
    else:
        raise ValueError(f"unknown reduction {op!r}")
    return np.asarray(out, dtype=DTYPE)


def dot(a, b) -> float:
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ShapeError(f"length mismatch: {a.size} vs {b.size}")
    return float(np.dot(a, b))


def to_bytes(t) -> bytes:
    t = np.ascontiguousarray(t, dtype="<f4")
    shape = t.shape if t.ndim else (1,)
    head = MAGIC + struct.pack("<I", len(shape)) + struct.pack(f"<{len(shape)}I", *shape)
    return head + t.tobytes(order="C")


def from_bytes(buf: bytes) -> Tensor:
    if buf[:4] != MAGIC:
        raise ValueError(f"bad magic {buf[:4]!r}, expected {MAGIC!r}")
    (ndim,) = struct.unpack_from("<I", buf, 4)
    dims = struct.unpack_from(f"<{ndim}I", buf, 8)
    offset = 8 + 4 * ndim
    n = int(np.prod(dims, dtype=np.int64))
    if len(buf) - offset != 4 * n:
        raise ValueError(f"payload has {len(buf) - offset} bytes, shape {dims} needs {4 * n}")
    data = np.frombuffer(buf, dtype="<f4", count=n, offset=offset)
    return as_tensor(data.reshape(dims))


def save(path: str | os.PathLike, t) -> None:
    Path(path).write_bytes(to_bytes(t))


def load(path: str | os.PathLike) -> Tensor:
    return from_bytes(Path(path).read_bytes())
