"""Numeric core: float64 arrays, a handful of kernels and the seeded RNG.

Tensors are plain C-contiguous ``numpy.ndarray`` objects of dtype float64
(row-major, so flat index = sum(i_k * stride_k) with the last axis fastest).
Everything that consumes randomness takes an explicit :class:`Rng`.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
from scipy.special import expit

from .errors import ConfigurationError, NonFiniteError, ShapeError

DTYPE = np.float64


def as_tensor(x, *, copy: bool = False) -> np.ndarray:
    if copy:
        return np.array(x, dtype=DTYPE, order="C")
    return np.ascontiguousarray(x, dtype=DTYPE)


def zeros(shape) -> np.ndarray:
    return np.zeros(shape, dtype=DTYPE)


def check_finite(x: np.ndarray, where: str = "tensor") -> np.ndarray:
    """Raise :class:`NonFiniteError` if ``x`` holds a NaN or Inf."""
    if not np.isfinite(x).all():
        bad = int(np.size(x) - np.count_nonzero(np.isfinite(x)))
        raise NonFiniteError(f"{bad} non-finite value(s) in {where}", where=where)
    return x


def flat_index(shape: Sequence[int], index: Sequence[int]) -> int:
    """Row-major flat offset of ``index`` inside an array of ``shape``."""
    if len(shape) != len(index):
        raise ShapeError(f"index {tuple(index)} has wrong rank for shape {tuple(shape)}")
    off = 0
    for extent, i in zip(shape, index):
        if not 0 <= i < extent:
            raise IndexError(f"index {tuple(index)} out of bounds for shape {tuple(shape)}")
        off = off * extent + i
    return off


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = as_tensor(a)
    b = as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    return check_finite(a @ b, "matmul")


def row_sums(x: np.ndarray) -> np.ndarray:
    """Sum over the last axis, shape ``x.shape[:-1]``.

    numpy's reductions over a short trailing axis are several times slower
    than a matrix-vector product, which matters for attention rows.
    """
    x = as_tensor(x)
    return x @ np.ones(x.shape[-1])


def softmax_rows(x: np.ndarray) -> np.ndarray:
    """Row-wise softmax over the last axis, max-subtracted for stability."""
    x = as_tensor(x)
    n = x.shape[-1]
    x2 = x.reshape(-1, n)
    if not np.isfinite(row_sums(x2)).all():
        check_finite(x, "softmax input")
    # max over rows via the transposed copy: reducing along axis 0 is fast
    m = np.ascontiguousarray(x2.T).max(axis=0) if x2.size else np.zeros(len(x2))
    e = np.exp(x2 - m[:, None])
    e /= row_sums(e)[:, None]
    return e.reshape(x.shape)


def sigmoid(x):
    return expit(x)


def relu(x):
    return np.maximum(x, 0.0)


def linear(x):
    return x


ACTIVATIONS = {
    "sigmoid": sigmoid,
    "tanh": np.tanh,
    "relu": relu,
    "linear": linear,
}


def activation_grad(name: str, y: np.ndarray) -> np.ndarray:
    """Derivative of an activation expressed through its output ``y``."""
    if name == "sigmoid":
        return y * (1.0 - y)
    if name == "tanh":
        return 1.0 - y * y
    if name == "relu":
        return (y > 0).astype(DTYPE)
    if name == "linear":
        return np.ones_like(y)
    raise ConfigurationError(f"unknown activation {name!r}; expected one of {sorted(ACTIVATIONS)}")


def elementwise(x: np.ndarray, f: str) -> np.ndarray:
    try:
        fn = ACTIVATIONS[f]
    except KeyError:
        raise ConfigurationError(f"unknown activation {f!r}; expected one of {sorted(ACTIVATIONS)}") from None
    return fn(as_tensor(x))


class Rng:
    """Deterministic generator: numpy's PCG64 seeded through ``SeedSequence``.

    ``child(*key)`` derives an independent stream from ``(seed, key)`` alone,
    so children do not depend on how much the parent has been consumed.
    """

    def __init__(self, seed: int, key: tuple = ()):
        if not 0 <= int(seed) < 2**64:
            raise ConfigurationError(f"seed must be a 64-bit unsigned integer, got {seed}")
        self.seed = int(seed)
        self.key = tuple(int(k) for k in key)
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=self.key)
        self._gen = np.random.Generator(np.random.PCG64(ss))

    def child(self, *key: int) -> "Rng":
        return Rng(self.seed, self.key + tuple(key))

    def __repr__(self):
        return f"Rng(seed={self.seed}, key={self.key})"

    def uniform(self, low=0.0, high=1.0, size=None):
        return self._gen.uniform(low, high, size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self._gen.normal(loc, scale, size)

    def random(self, size=None):
        return self._gen.random(size)

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)


_ALLOCATOR_TUNED = False


def tune_allocator() -> bool:
    """Keep large temporaries on the glibc heap instead of fresh mmaps.

    Training allocates many short-lived arrays of a few hundred KB to a few MB.
    By default glibc serves each from a new mmap, so every step pays page
    faults and zero-filling again. Raising the mmap/trim thresholds lets the
    heap recycle those blocks (typically 10-30% faster steps). No-op on other
    C libraries, or when ``A2CLNET_NO_MALLOC_TUNING`` is set. Returns whether
    the tuning is active.
    """
    global _ALLOCATOR_TUNED
    if _ALLOCATOR_TUNED:
        return True
    import ctypes
    import os
    import platform

    if os.environ.get("A2CLNET_NO_MALLOC_TUNING") or platform.libc_ver()[0] != "glibc":
        return False
    try:
        libc = ctypes.CDLL("libc.so.6")
    except OSError:
        return False
    M_TRIM_THRESHOLD, M_TOP_PAD, M_MMAP_THRESHOLD = -1, -2, -3
    ok = (libc.mallopt(M_MMAP_THRESHOLD, 32 * 2**20)  # the largest value glibc accepts
          and libc.mallopt(M_TRIM_THRESHOLD, 1024 * 2**20)
          and libc.mallopt(M_TOP_PAD, 64 * 2**20))
    _ALLOCATOR_TUNED = bool(ok)
    return _ALLOCATOR_TUNED
