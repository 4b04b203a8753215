"""Dense n-dimensional array type used as the value currency of the package.

A Tensor is a thin, validated wrapper over a C-contiguous numpy array of
float32 (training/inference) or float64 (gradient checking).  There is no
broadcasting beyond tensor-scalar: every binary op demands identical shapes,
which turns silent shape bugs into immediate errors.
"""

from __future__ import annotations

import os

import numpy as np

# Ranks above 4 never occur in this network (batch, channel, height, width).
MAX_RANK = 4

DTYPES = (np.float32, np.float64)

# When set, every op asserts its result is finite.  Costs a full scan per op,
# so it is opt-in (tests enable it around training paths).
DEBUG_CHECK_FINITE = os.environ.get("RCNET_DEBUG", "") not in ("", "0")


class Tensor:
    """Immutable dense array: shape metadata plus flat row-major f32/f64 data."""

    __slots__ = ("data",)

    def __init__(self, data, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        if arr.dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
            raise TypeError(f"tensors hold float32/float64, got {arr.dtype} "
                            f"(pass dtype= to convert)")
        if arr.ndim:  # ascontiguousarray would silently turn 0-d into 1-d
            arr = np.ascontiguousarray(arr)
        _check_shape(arr.shape)
        self.data = arr
        if DEBUG_CHECK_FINITE:
            _assert_finite(arr, "Tensor()")

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def astype(self, dtype) -> "Tensor":
        return Tensor(self.data.astype(dtype))

    def copy(self) -> "Tensor":
        return Tensor(self.data.copy())

    def reshape(self, shape) -> "Tensor":
        shape = tuple(int(d) for d in shape)
        _check_shape(shape)
        if int(np.prod(shape, dtype=np.int64)) != self.size:
            raise ValueError(f"cannot reshape {self.shape} to {shape}")
        return Tensor(self.data.reshape(shape))

    def item(self) -> float:
        if self.size != 1:
            raise ValueError(f"item() on tensor of size {self.size}")
        return float(self.data.reshape(-1)[0])

    def tolist(self):
        return self.data.tolist()

    # -- elementwise arithmetic (identical shapes, or tensor-scalar) --

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name})"


def _check_shape(shape):
    if len(shape) > MAX_RANK:
        raise ValueError(f"rank {len(shape)} exceeds maximum {MAX_RANK}")
    for d in shape:
        if d < 1:
            raise ValueError(f"invalid dimension {d} in shape {tuple(shape)}")


def _assert_finite(arr, where: str):
    if not np.all(np.isfinite(arr)):
        raise FloatingPointError(f"non-finite values out of {where}")


def _wrap(arr) -> Tensor:
    t = Tensor.__new__(Tensor)
    t.data = arr
    if DEBUG_CHECK_FINITE:
        _assert_finite(arr, "op")
    return t


# -- creation --

def zeros(shape, dtype=np.float32) -> Tensor:
    _check_shape(shape)
    return _wrap(np.zeros(shape, dtype=dtype))


def ones(shape, dtype=np.float32) -> Tensor:
    _check_shape(shape)
    return _wrap(np.ones(shape, dtype=dtype))


def full(shape, value, dtype=np.float32) -> Tensor:
    _check_shape(shape)
    return _wrap(np.full(shape, value, dtype=dtype))


def zeros_like(t: Tensor) -> Tensor:
    return _wrap(np.zeros_like(t.data))


def from_array(arr, dtype=None) -> Tensor:
    return Tensor(arr, dtype=dtype)


# -- elementwise --

def _coerce_pair(a: Tensor, b):
    """Return (a_data, b_data) for a binary op; b may be a scalar or a
    rank-0 tensor (the only permitted broadcast)."""
    if isinstance(b, Tensor):
        if b.data.ndim == 0:
            return a.data, a.data.dtype.type(b.data)
        if a.shape != b.shape:
            raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
        return a.data, b.data
    if np.isscalar(b):
        return a.data, a.data.dtype.type(b)
    raise TypeError(f"unsupported operand type {type(b).__name__}")


def add(a: Tensor, b) -> Tensor:
    x, y = _coerce_pair(a, b)
    return _wrap(x + y)


def sub(a: Tensor, b) -> Tensor:
    x, y = _coerce_pair(a, b)
    return _wrap(x - y)


def mul(a: Tensor, b) -> Tensor:
    x, y = _coerce_pair(a, b)
    return _wrap(x * y)


def scale(a: Tensor, s: float) -> Tensor:
    return _wrap(a.data * a.data.dtype.type(s))


# -- reductions --

def _check_axes(rank: int, axes):
    if axes is None:
        return None
    if isinstance(axes, int):
        axes = (axes,)
    axes = tuple(int(ax) for ax in axes)
    for ax in axes:
        if ax < 0 or ax >= rank:
            raise ValueError(f"axis {ax} out of range for rank {rank}")
    return axes


def tsum(a: Tensor, axes=None, keepdims: bool = False) -> Tensor:
    axes = _check_axes(len(a.shape), axes)
    return _wrap(np.asarray(a.data.sum(axis=axes, keepdims=keepdims)))


def tmean(a: Tensor, axes=None, keepdims: bool = False) -> Tensor:
    axes = _check_axes(len(a.shape), axes)
    return _wrap(np.asarray(a.data.mean(axis=axes, keepdims=keepdims)))
