"""Deterministic dense linear algebra helpers and seeded randomness.

Everything here is 64-bit float / 64-bit unsigned integer.  The random
generator is a fixed splitmix64 stream (counter-based), never the platform
default, so traces reproduce bit-for-bit across machines and Python versions.
"""

from __future__ import annotations

import math
from collections.abc import Callable, Sequence

import numpy as np

__all__ = [
    "SeededRng",
    "log_sum_exp",
    "pairwise_sq_dists",
    "finite_diff_grad",
]

_MASK = 0xFFFFFFFFFFFFFFFF
_GAMMA = 0x9E3779B97F4A7C15  # golden-ratio increment of splitmix64


def _mix64(z: int) -> int:
    """splitmix64 finalizer on a 64-bit integer."""
    z &= _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def _mix64_array(z: np.ndarray) -> np.ndarray:
    z = z.astype(np.uint64, copy=True)
    with np.errstate(over="ignore"):
        z ^= z >> np.uint64(30)
        z *= np.uint64(0xBF58476D1CE4E5B9)
        z ^= z >> np.uint64(27)
        z *= np.uint64(0x94D049BB133111EB)
        z ^= z >> np.uint64(31)
    return z


class SeededRng:
    """Counter-based splitmix64 generator.

    The i-th raw draw is ``mix64(seed + (i+1) * GAMMA)``, so bulk and scalar
    generation produce identical streams.  Identical seeds give byte-identical
    sequences on every platform.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & _MASK
        self._counter = 0

    def _raw(self, n: int) -> np.ndarray:
        idx = np.arange(self._counter + 1, self._counter + n + 1, dtype=np.uint64)
        self._counter += n
        with np.errstate(over="ignore"):
            states = np.uint64(self.seed) + idx * np.uint64(_GAMMA)
        return _mix64_array(states)

    def next_u64(self) -> int:
        return int(self._raw(1)[0])

    def random(self) -> float:
        """Uniform double in [0, 1) with 53 random bits."""
        return float(self.uniforms(1)[0])

    def uniforms(self, n: int) -> np.ndarray:
        return (self._raw(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53

    def uniform(self, lo: float, hi: float) -> float:
        return lo + (hi - lo) * self.random()

    def normals(self, n: int) -> np.ndarray:
        """Standard normals via Box-Muller; two uniforms consumed per value."""
        u = self._raw(2 * n)
        # shift into (0, 1] so the log never sees zero
        u1 = ((u[0::2] >> np.uint64(11)).astype(np.float64) + 1.0) * 2.0**-53
        u2 = (u[1::2] >> np.uint64(11)).astype(np.float64) * 2.0**-53
        return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * math.pi * u2)

    def normal(self) -> float:
        return float(self.normals(1)[0])

    def randint(self, n: int) -> int:
        """Integer in [0, n).  Scaled-double construction (documented bias
        below 2^-40 for the sizes used here)."""
        if n <= 0:
            raise ValueError("randint needs n >= 1")
        return min(int(self.random() * n), n - 1)

    def shuffle(self, items: Sequence | np.ndarray) -> np.ndarray:
        """Fisher-Yates shuffle; returns a new array, input untouched."""
        out = np.array(items)
        for i in range(len(out) - 1, 0, -1):
            j = self.randint(i + 1)
            out[i], out[j] = out[j], out[i]
        return out

    def choice_no_replace(self, n: int, k: int) -> np.ndarray:
        """k distinct indices from range(n), partial Fisher-Yates order."""
        if not 0 <= k <= n:
            raise ValueError(f"cannot draw {k} of {n}")
        pool = np.arange(n)
        for i in range(k):
            j = i + self.randint(n - i)
            pool[i], pool[j] = pool[j], pool[i]
        return pool[:k].copy()

    def split(self, index: int) -> "SeededRng":
        """Child generator for stream `index`; never shares this stream."""
        return SeededRng(_mix64(self.seed ^ _mix64(((index + 1) * _GAMMA) & _MASK)))


def log_sum_exp(v: np.ndarray) -> float:
    """log(sum(exp(v))) via max-shift; raises on empty input."""
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0:
        raise ValueError("empty vector")
    m = float(np.max(v))
    return m + math.log(float(np.sum(np.exp(v - m))))


def log_sum_exp_rows(m: np.ndarray) -> np.ndarray:
    """Row-wise max-shifted log-sum-exp for a 2-D array."""
    m = np.asarray(m, dtype=np.float64)
    shift = m.max(axis=1, keepdims=True)
    return (shift + np.log(np.exp(m - shift).sum(axis=1, keepdims=True)))[:, 0]


def pairwise_sq_dists(a: np.ndarray) -> np.ndarray:
    """Symmetric matrix of squared Euclidean distances between rows of `a`.

    The diagonal is exactly zero and tiny negative values from cancellation
    are clipped to zero.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] < 1:
        raise ValueError("need a 2-D array with at least one row")
    sq = np.einsum("ij,ij->i", a, a)
    d = sq[:, None] + sq[None, :] - 2.0 * (a @ a.T)
    d = 0.5 * (d + d.T)
    np.clip(d, 0.0, None, out=d)
    np.fill_diagonal(d, 0.0)
    return d


def finite_diff_grad(f: Callable[[np.ndarray], float], x: np.ndarray, h: float) -> np.ndarray:
    """Central-difference gradient (f(x+h e_i) - f(x-h e_i)) / 2h."""
    if h <= 0:
        raise ValueError("h must be positive")
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    for i in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp.flat[i] += h
        xm.flat[i] -= h
        fp = float(f(xp))
        fm = float(f(xm))
        if not (math.isfinite(fp) and math.isfinite(fm)):
            raise ValueError("non-finite function value in finite differences")
        g.flat[i] = (fp - fm) / (2.0 * h)
    return g
