"""Numerical substrate: float64 matrices, a seeded RNG and overflow-safe scalars.

Matrices are plain 2-D ``numpy.float64`` arrays; helpers here validate shapes
and finiteness at module boundaries rather than wrapping arrays in a class.

Randomness comes from :class:`Rng`, which owns a numpy ``PCG64`` bit
generator.  PCG64 is a fixed, published algorithm whose output stream is
identical across platforms for a given seed.  Uniforms are the generator's
53-bit doubles; Gaussians are derived from those uniforms with the Box-Muller
transform so that every stream is reproducible from the uniform source alone.
"""
from __future__ import annotations

import math

import numpy as np

__all__ = [
    "ShapeError",
    "Rng",
    "as_matrix",
    "matmul",
    "log_sum_exp",
    "sigmoid",
    "sample_uniform",
    "sample_gaussian",
]


class ShapeError(ValueError):
    """Raised when array dimensions do not line up."""


def as_matrix(values, *, name: str = "matrix") -> np.ndarray:
    """Coerce ``values`` to a finite 2-D float64 array (1-D input becomes one row)."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul needs 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    return a @ b


def log_sum_exp(v, axis: int | None = None):
    """``log(sum(exp(v)))`` with a max shift; reduces over ``axis`` (all entries if None)."""
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0:
        raise ValueError("log_sum_exp of an empty array")
    m = np.max(v, axis=axis, keepdims=True)
    # all -inf slices: keep the shift finite so the result is -inf, not nan
    m = np.where(np.isfinite(m), m, 0.0)
    out = np.log(np.sum(np.exp(v - m), axis=axis, keepdims=True)) + m
    if axis is None:
        return float(out.reshape(()))
    return np.squeeze(out, axis=axis)


def sigmoid(x):
    """Logistic function evaluated branch-wise so neither branch overflows.

    Accepts a scalar or an array; returns the same kind.
    """
    if np.isscalar(x):
        if x >= 0:
            return 1.0 / (1.0 + math.exp(-x))
        e = math.exp(x)
        return e / (1.0 + e)
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


class Rng:
    """Single-owner seeded random stream.

    Never share one instance between threads; use :meth:`spawn` to derive
    independent children instead.
    """

    def __init__(self, seed: int):
        seed = int(seed)
        if not 0 <= seed < 2**64:
            raise ValueError(f"seed must fit in 64 unsigned bits, got {seed}")
        self.seed = seed
        self._seq = np.random.SeedSequence(seed)
        self._gen = np.random.Generator(np.random.PCG64(self._seq))

    def random(self, size) -> np.ndarray:
        """Uniform doubles in [0, 1)."""
        return self._gen.random(size)

    def integers(self, high: int, size) -> np.ndarray:
        return self._gen.integers(0, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def spawn(self, n: int = 1) -> list["Rng"]:
        """Derive ``n`` statistically independent children by seed-splitting."""
        children = []
        for child_seq in self._seq.spawn(n):
            child = Rng.__new__(Rng)
            child.seed = self.seed
            child._seq = child_seq
            child._gen = np.random.Generator(np.random.PCG64(child_seq))
            children.append(child)
        return children

    def uniform(self, lo: float, hi: float, size) -> np.ndarray:
        if not hi > lo:
            raise ValueError(f"uniform range inverted or empty: [{lo}, {hi})")
        return lo + (hi - lo) * self.random(size)

    def gaussian(self, mean: float, std: float, size) -> np.ndarray:
        """Box-Muller: z = sqrt(-2 ln u1) * (cos 2πu2, sin 2πu2), u1 in (0, 1]."""
        if not std > 0:
            raise ValueError(f"std must be positive, got {std}")
        shape = (size,) if np.isscalar(size) else tuple(size)
        n = int(np.prod(shape))
        pairs = (n + 1) // 2
        u = self.random((pairs, 2))
        radius = np.sqrt(-2.0 * np.log1p(-u[:, 0]))
        angle = 2.0 * np.pi * u[:, 1]
        z = np.empty(2 * pairs)
        z[0::2] = radius * np.cos(angle)
        z[1::2] = radius * np.sin(angle)
        return mean + std * z[:n].reshape(shape)


def sample_uniform(rng: Rng, lo: float, hi: float, n: int) -> np.ndarray:
    return rng.uniform(lo, hi, n)


def sample_gaussian(rng: Rng, mean: float, std: float, n: int) -> np.ndarray:
    return rng.gaussian(mean, std, n)
