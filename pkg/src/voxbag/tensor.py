"""Dense float32 tensors and the handful of operations the pipeline needs.

Tensors are plain C-contiguous ``numpy.ndarray`` objects of dtype float32
with rank at most 5 (batch, channel, depth, height, width). The functions
here add the contract checks numpy leaves out: no implicit broadcasting,
explicit shape errors that name both operands, population variance.
"""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

from .errors import ShapeError

DTYPE = np.float32
MAX_RANK = 5

_BINARY = {"add": np.add, "sub": np.subtract, "mul": np.multiply}


def as_tensor(values, dtype=DTYPE, check_finite: bool = False) -> np.ndarray:
    """Coerce ``values`` to a contiguous tensor and validate its shape."""
    t = np.ascontiguousarray(values, dtype=dtype)
    if t.ndim == 0:
        t = t.reshape(1)
    if t.ndim > MAX_RANK:
        raise ShapeError(f"rank {t.ndim} exceeds the maximum of {MAX_RANK}")
    if 0 in t.shape:
        raise ShapeError(f"shape {t.shape} has a zero extent")
    if check_finite and not np.all(np.isfinite(t)):
        raise ShapeError("tensor contains non-finite values")
    return t


def _require_same_shape(a: np.ndarray, b: np.ndarray, what: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{what}: shape mismatch {a.shape} vs {b.shape}")


def elementwise(op: str, a, b=None) -> np.ndarray:
    """Apply ``add``, ``sub``, ``mul``, ``scale`` or ``relu_map`` pointwise.

    Binary ops need equal shapes. ``scale`` takes a scalar ``b``.
    """
    a = np.asarray(a)
    if op == "relu_map":
        return np.maximum(a, 0).astype(a.dtype, copy=False)
    if op == "scale":
        if not np.isscalar(b):
            raise ShapeError("scale expects a scalar factor")
        return (a * a.dtype.type(b)).astype(a.dtype, copy=False)
    if op not in _BINARY:
        raise ValueError(f"unknown elementwise op {op!r}")
    if np.isscalar(b):
        return _BINARY[op](a, a.dtype.type(b))
    b = np.asarray(b)
    _require_same_shape(a, b, op)
    return _BINARY[op](a, b)


def matmul(a, b) -> np.ndarray:
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul needs rank-2 operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions differ {a.shape} vs {b.shape}")
    return a @ b


def _normalize_axes(t: np.ndarray, axes) -> tuple[int, ...]:
    if axes is None:
        return tuple(range(t.ndim))
    if isinstance(axes, int):
        axes = (axes,)
    out = []
    for ax in axes:
        if not -t.ndim <= ax < t.ndim:
            raise ShapeError(f"axis {ax} out of range for rank {t.ndim}")
        out.append(ax % t.ndim)
    return tuple(sorted(set(out)))


def reduce(t, axes=None, kind: str = "sum") -> np.ndarray:
    """Reduce over ``axes`` (all axes when None).

    ``var`` divides by the element count. ``max`` keeps the tensor's dtype;
    the others accumulate in float64 and cast back.
    """
    t = np.asarray(t)
    ax = _normalize_axes(t, axes)
    if not ax:
        if kind != "sum":
            raise ShapeError(f"reduce kind {kind!r} needs at least one axis")
        return t.copy()
    if kind == "max":
        return np.max(t, axis=ax)
    acc = t.astype(np.float64)
    if kind == "sum":
        r = acc.sum(axis=ax)
    elif kind == "mean":
        r = acc.mean(axis=ax)
    elif kind == "var":
        mu = acc.mean(axis=ax, keepdims=True)
        r = ((acc - mu) ** 2).mean(axis=ax)
    else:
        raise ValueError(f"unknown reduction {kind!r}")
    return np.asarray(r, dtype=t.dtype if t.dtype.kind == "f" else DTYPE)


def reshape(t, shape: Sequence[int]) -> np.ndarray:
    t = np.asarray(t)
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape)) != t.size:
        raise ShapeError(f"cannot reshape {t.shape} ({t.size} elements) to {shape}")
    return np.ascontiguousarray(t).reshape(shape)


def pad_zero(t, pads: Iterable) -> np.ndarray:
    """Zero-pad; ``pads`` is one ``(before, after)`` pair per axis."""
    t = np.asarray(t)
    pads = [tuple(int(v) for v in p) for p in pads]
    if len(pads) != t.ndim:
        raise ShapeError(f"need {t.ndim} pad pairs, got {len(pads)}")
    if any(v < 0 for p in pads for v in p):
        raise ShapeError("pad amounts must be non-negative")
    out = np.zeros([n + b + a for n, (b, a) in zip(t.shape, pads)], dtype=t.dtype)
    out[tuple(slice(b, b + n) for n, (b, _) in zip(t.shape, pads))] = t
    return out


def slice_region(t, starts: Sequence[int], stops: Sequence[int]) -> np.ndarray:
    t = np.asarray(t)
    if len(starts) != t.ndim or len(stops) != t.ndim:
        raise ShapeError("slice_region needs one start and stop per axis")
    for n, lo, hi in zip(t.shape, starts, stops):
        if not 0 <= lo < hi <= n:
            raise ShapeError(f"slice [{lo}, {hi}) outside extent {n}")
    return t[tuple(slice(lo, hi) for lo, hi in zip(starts, stops))].copy()
