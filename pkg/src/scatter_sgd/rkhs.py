"""Elements of the vector-valued RKHS as kernel expansions over data centers."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .kernel import GramMatrix, kernel_matrix

__all__ = [
    "Dataset",
    "Expansion",
    "AtomList",
    "zeros",
    "representer",
    "evaluate",
    "evaluate_at_center",
    "evaluate_at_centers",
    "inner_product",
    "norm_squared",
    "norm",
    "scale",
    "axpy",
    "project_ball",
]


@dataclass(frozen=True, eq=False)
class Dataset:
    """Scattered samples ``(x_i, y_i)`` with ``x_i`` in R^d and ``y_i`` in R^m."""

    points: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        x = np.array(self.points, dtype=np.float64, ndmin=2)
        y = np.array(self.targets, dtype=np.float64)
        if y.ndim == 1:
            y = y[:, None]
        if x.ndim != 2 or y.ndim != 2 or x.shape[0] != y.shape[0]:
            raise ValueError("points and targets must be (n, d) and (n, m) with matching n")
        if x.shape[0] < 1 or x.shape[1] < 1 or y.shape[1] < 1:
            raise ValueError("empty dataset")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise ValueError("non-finite input")
        if np.unique(x, axis=0).shape[0] != x.shape[0]:
            raise ValueError("duplicate centers")
        x.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "points", x)
        object.__setattr__(self, "targets", y)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def d(self) -> int:
        return self.points.shape[1]

    @property
    def m(self) -> int:
        return self.targets.shape[1]


@dataclass(eq=False)
class Expansion:
    """``f = sum_i k(., x_i) C[i]`` over the centers of ``gram``."""

    coeffs: np.ndarray
    gram: GramMatrix

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=np.float64)
        if self.coeffs.ndim != 2 or self.coeffs.shape[0] != self.gram.n:
            raise ValueError(f"coeffs must have shape (n={self.gram.n}, m)")

    @property
    def m(self) -> int:
        return self.coeffs.shape[1]

    def copy(self) -> "Expansion":
        return Expansion(self.coeffs.copy(), self.gram)


def zeros(gram: GramMatrix, m: int) -> Expansion:
    return Expansion(np.zeros((gram.n, m)), gram)


def _check_index(gram: GramMatrix, i: int) -> int:
    # 0-based center index
    if not 0 <= i < gram.n:
        raise IndexError(f"center index {i} out of range for n={gram.n}")
    return int(i)


def _check_same(f: Expansion, g: Expansion):
    if f.gram is not g.gram:
        raise ValueError("mismatched dataset reference")
    if f.coeffs.shape != g.coeffs.shape:
        raise ValueError("mismatched output dimension")


def representer(gram: GramMatrix, i: int, v) -> Expansion:
    """Riesz representer of ``f -> (v, f(x_i))_V``."""
    i = _check_index(gram, i)
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    if not np.all(np.isfinite(v)):
        raise ValueError("non-finite input")
    c = np.zeros((gram.n, v.shape[0]))
    c[i] = v
    return Expansion(c, gram)


def evaluate(f: Expansion, x) -> np.ndarray:
    """Point evaluation by direct kernel sums (no Gram entries involved)."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    kx = kernel_matrix(f.gram.spec, np.atleast_2d(x), f.gram.points)
    out = kx @ f.coeffs
    return out[0] if single else out


def evaluate_at_center(f: Expansion, i: int) -> np.ndarray:
    i = _check_index(f.gram, i)
    return f.gram.entries[i] @ f.coeffs


def evaluate_at_centers(f: Expansion) -> np.ndarray:
    return f.gram.entries @ f.coeffs


def inner_product(f: Expansion, g: Expansion) -> float:
    _check_same(f, g)
    return float(np.sum(f.coeffs * (f.gram.entries @ g.coeffs)))


def norm_squared(f: Expansion) -> float:
    val = float(np.sum(f.coeffs * (f.gram.entries @ f.coeffs)))
    if -1e-12 < val < 0.0:
        return 0.0
    return val


def norm(f: Expansion) -> float:
    return math.sqrt(norm_squared(f))


def scale(f: Expansion, a: float) -> Expansion:
    return Expansion(f.coeffs * a, f.gram)


def axpy(f: Expansion, a: float, g: Expansion) -> Expansion:
    """``f + a * g``."""
    _check_same(f, g)
    return Expansion(f.coeffs + a * g.coeffs, f.gram)


def project_ball(f: Expansion, r: float) -> Expansion:
    """Metric projection onto the closed ball of radius ``r`` in H."""
    if not r > 0:
        raise ValueError("radius must be positive")
    if math.isinf(r):
        return f.copy()
    s = max(1.0, norm(f) / r)
    return scale(f, 1.0 / s)


class AtomList:
    """Ordered atoms ``(center, weight)`` with ``f = sum k(., x_center) w``.

    Global scalings are applied eagerly to every stored weight.
    """

    def __init__(self, gram: GramMatrix, m: int):
        self.gram = gram
        self.m = int(m)
        self.centers: list[int] = []
        self._weights = np.zeros((16, self.m))

    def __len__(self) -> int:
        return len(self.centers)

    @property
    def weights(self) -> np.ndarray:
        return self._weights[: len(self.centers)]

    def append(self, i: int, w) -> None:
        i = _check_index(self.gram, i)
        k = len(self.centers)
        if k == self._weights.shape[0]:
            self._weights = np.concatenate([self._weights, np.zeros_like(self._weights)])
        self._weights[k] = np.asarray(w, dtype=np.float64).reshape(self.m)
        self.centers.append(i)

    def scale(self, a: float) -> None:
        self._weights[: len(self.centers)] *= a

    def to_expansion(self) -> Expansion:
        c = np.zeros((self.gram.n, self.m))
        if self.centers:
            np.add.at(c, np.asarray(self.centers), self.weights)
        return Expansion(c, self.gram)

    def evaluate_at_centers(self) -> np.ndarray:
        """Evaluate atom by atom at every center, without merging weights."""
        if not self.centers:
            return np.zeros((self.gram.n, self.m))
        cols = self.gram.entries[:, np.asarray(self.centers)]
        return cols @ self.weights
