"""Normalized translation-invariant scalar kernels and their Gram matrices.

A scalar kernel ``k`` on R^d induces the vector-valued RKHS with operator
kernel ``K(x, x') = k(x, x') I_V``.  All families here satisfy ``k(x, x) = 1``.
"""

from __future__ import annotations

import enum
import math
import threading
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

__all__ = [
    "KernelFamily",
    "KernelSpec",
    "GramMatrix",
    "NotPositiveDefiniteError",
    "eval_kernel",
    "kernel_matrix",
    "embedding_constant",
    "gram",
    "JITTER",
]

JITTER = 1e-10
_SQRT3 = math.sqrt(3.0)
_CACHE_LIMIT = 16


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    pass


class KernelFamily(str, enum.Enum):
    GAUSSIAN = "gaussian"
    LAPLACIAN = "laplacian"
    MATERN32 = "matern32"


@dataclass(frozen=True)
class KernelSpec:
    family: KernelFamily = KernelFamily.GAUSSIAN
    bandwidth: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "family", KernelFamily(self.family))
        bw = float(self.bandwidth)
        if not (bw > 0 and math.isfinite(bw)):
            raise ValueError(f"bandwidth must be positive and finite, got {self.bandwidth!r}")
        object.__setattr__(self, "bandwidth", bw)

    def profile(self, dist: np.ndarray) -> np.ndarray:
        """Kernel value as a function of Euclidean distance."""
        t = np.asarray(dist, dtype=np.float64) / self.bandwidth
        if self.family is KernelFamily.GAUSSIAN:
            return np.exp(-0.5 * t * t)
        if self.family is KernelFamily.LAPLACIAN:
            return np.exp(-t)
        st = _SQRT3 * t
        return (1.0 + st) * np.exp(-st)


def _as_points(x, name="x") -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if not np.all(np.isfinite(arr)):
        raise ValueError("non-finite input")
    return arr


def eval_kernel(spec: KernelSpec, x, x_prime) -> float:
    x = _as_points(x)
    x_prime = _as_points(x_prime)
    if x.ndim != 1 or x.shape != x_prime.shape:
        raise ValueError("dimension mismatch")
    diff = x - x_prime
    return float(spec.profile(math.sqrt(float(np.dot(diff, diff)))))


def kernel_matrix(spec: KernelSpec, a, b) -> np.ndarray:
    """Cross kernel matrix ``K[i, j] = k(a_i, b_j)`` for point arrays (rows)."""
    a = np.atleast_2d(_as_points(a))
    b = np.atleast_2d(_as_points(b))
    if a.shape[1] != b.shape[1]:
        raise ValueError("dimension mismatch")
    sq = np.sum((a[:, None, :] - b[None, :, :]) ** 2, axis=-1)
    return spec.profile(np.sqrt(sq))


def embedding_constant(spec: KernelSpec) -> float:
    # sup_x sqrt(k(x, x)); every supported family is normalized
    return float(np.sqrt(spec.profile(0.0)))


@dataclass(eq=False)
class GramMatrix:
    """Symmetric Gram matrix over a fixed set of distinct centers.

    Cholesky factors of ``alpha * I + G`` are computed lazily and cached per
    shift; the cache is guarded so concurrent readers factorize once.
    """

    spec: KernelSpec
    points: np.ndarray
    entries: np.ndarray
    _factors: dict = field(default_factory=dict, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    def __getstate__(self):
        state = self.__dict__.copy()
        state["_factors"] = {}
        del state["_lock"]
        return state

    def __setstate__(self, state):
        self.__dict__.update(state)
        self._lock = threading.Lock()

    def factor(self, shift: float = 0.0):
        """Return the ``(c, lower)`` Cholesky factor of ``shift * I + G``."""
        key = float(shift)
        cached = self._factors.get(key)
        if cached is not None:
            return cached
        with self._lock:
            cached = self._factors.get(key)
            if cached is None:
                a = self.entries + key * np.eye(self.n)
                try:
                    cached = linalg.cho_factor(a, lower=True, check_finite=False)
                except np.linalg.LinAlgError as exc:
                    raise NotPositiveDefiniteError("gram not positive definite") from exc
                if len(self._factors) >= _CACHE_LIMIT:
                    self._factors.pop(next(iter(self._factors)))
                self._factors[key] = cached
        return cached

    @property
    def cholesky_factor(self) -> np.ndarray:
        c, _ = self.factor(0.0)
        return np.tril(c)

    def solve(self, rhs: np.ndarray, shift: float = 0.0) -> np.ndarray:
        return linalg.cho_solve(self.factor(shift), rhs, check_finite=False)


def gram(spec: KernelSpec, points, jitter: bool = False) -> GramMatrix:
    pts = np.atleast_2d(_as_points(points))
    n = pts.shape[0]
    if n < 1:
        raise ValueError("need at least one point")
    if np.unique(pts, axis=0).shape[0] != n:
        raise ValueError("duplicate centers")
    g = np.empty((n, n))
    iu = np.triu_indices(n)
    diff = pts[iu[0]] - pts[iu[1]]
    g[iu] = spec.profile(np.sqrt(np.sum(diff * diff, axis=1)))
    g.T[iu] = g[iu]
    if jitter:
        g[np.diag_indices(n)] += JITTER
    g.setflags(write=False)
    pts = pts.copy()
    pts.setflags(write=False)
    return GramMatrix(spec=spec, points=pts, entries=g)
