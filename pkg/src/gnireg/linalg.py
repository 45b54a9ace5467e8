"""Dense float64 matrix helpers and a counter-based, splittable random source.

Matrices are plain row-major ``numpy.ndarray`` values with ``dtype=float64``;
this module pins the conventions (shape checks, 64-bit precision) the rest of
the package relies on. 64-bit precision is not negotiable: the Monte-Carlo
remainder estimator subtracts nearly equal loss values and would drown in
32-bit rounding noise.
"""

from __future__ import annotations

import hashlib

import numpy as np

from .errors import DomainError, ShapeError


def as_matrix(data) -> np.ndarray:
    """Coerce to a 2-D float64 C-contiguous array."""
    a = np.ascontiguousarray(data, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeError(f"expected 2-D matrix, got ndim={a.ndim}")
    return a


def as_vector(data) -> np.ndarray:
    a = np.ascontiguousarray(data, dtype=np.float64)
    if a.ndim != 1:
        raise ShapeError(f"expected 1-D vector, got ndim={a.ndim}")
    return a


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product with an explicit inner-dimension check."""
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError("matmul requires 2-D operands")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"inner dimensions differ: {a.shape} x {b.shape}")
    return a @ b


def frobenius_sq(a: np.ndarray) -> float:
    """Squared Frobenius norm, the sum of squared entries."""
    return float(np.sum(np.square(a)))


class RandomSource:
    """Seedable, splittable stream of random draws.

    Backed by the Philox counter-based bit generator, so a (seed, path) pair
    identifies a stream independently of how many draws other streams have
    consumed. ``split(i)`` derives child stream ``i`` deterministically; the
    children of distinct indices never overlap. Identical (seed, path) gives
    a bit-identical draw sequence.
    """

    def __init__(self, seed: int, path: tuple[int, ...] = ()):
        self.seed = int(seed)
        self.path = tuple(int(p) for p in path)
        digest = hashlib.sha256(repr((self.seed, self.path)).encode()).digest()
        key = np.frombuffer(digest[:16], dtype=np.uint64)
        self._gen = np.random.Generator(np.random.Philox(key=key))

    def split(self, index: int) -> "RandomSource":
        """Independent child stream; deterministic in (seed, path, index)."""
        return RandomSource(self.seed, self.path + (int(index),))

    def normal(self, shape, sigma: float = 1.0) -> np.ndarray:
        """i.i.d. draws from N(0, sigma^2); sigma=0 short-circuits to zeros."""
        if sigma < 0:
            raise DomainError(f"sigma must be >= 0, got {sigma}")
        if sigma == 0.0:
            return np.zeros(shape, dtype=np.float64)
        return self._gen.normal(0.0, sigma, size=shape)

    def rademacher(self, shape) -> np.ndarray:
        """i.i.d. +/-1 draws."""
        return 2.0 * self._gen.integers(0, 2, size=shape).astype(np.float64) - 1.0

    def uniform(self, shape, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        return self._gen.uniform(low, high, size=shape)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def integers(self, low, high, shape=None):
        return self._gen.integers(low, high, size=shape)

    def __repr__(self):
        return f"RandomSource(seed={self.seed}, path={self.path})"


def gaussian(rs: RandomSource, n: int, sigma: float) -> np.ndarray:
    """n i.i.d. draws from N(0, sigma^2) as a vector."""
    return rs.normal(int(n), sigma)
