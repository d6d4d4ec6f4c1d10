"""The randomized Tikhonov objective and its problem constants.

Indices follow the randomized objective: ``0`` is the regularizer
``u_0(f) = |f|_H^2 / 2`` and ``i = 1..n`` is the data term at center ``i - 1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .kernel import GramMatrix, KernelSpec, embedding_constant, gram
from .rkhs import (
    Dataset,
    Expansion,
    evaluate_at_center,
    evaluate_at_centers,
    norm_squared,
    representer,
)

__all__ = [
    "Problem",
    "Constants",
    "loss_component",
    "full_objective",
    "grad_representer",
    "full_grad_representer",
    "sample_index",
    "sample_indices",
    "constants",
    "expected_grad_norm_sq_at",
]


@dataclass(frozen=True, eq=False)
class Problem:
    dataset: Dataset
    kernel: KernelSpec = field(default_factory=KernelSpec)
    q: float = 0.5
    r: float = math.inf
    jitter: bool = False
    gram: GramMatrix = field(init=False, repr=False)

    def __post_init__(self):
        q = float(self.q)
        r = float(self.r)
        if not 0.0 < q < 1.0:
            raise ValueError(f"q must lie in (0, 1), got {self.q!r}")
        if not r > 0:
            raise ValueError(f"r must be positive or inf, got {self.r!r}")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "gram", gram(self.kernel, self.dataset.points, jitter=self.jitter))

    @property
    def n(self) -> int:
        return self.dataset.n

    @property
    def m(self) -> int:
        return self.dataset.m


@dataclass(frozen=True)
class Constants:
    lam: float
    lambda_sq_lipschitz: float
    M: float
    rho: float = 1.0

    @property
    def lipschitz(self) -> float:
        return math.sqrt(self.lambda_sq_lipschitz)


def _check_component(p: Problem, i: int) -> int:
    if not 0 <= i <= p.n:
        raise IndexError(f"component index {i} out of range 0..{p.n}")
    return int(i)


def loss_component(p: Problem, i: int, f: Expansion) -> float:
    i = _check_component(p, i)
    if i == 0:
        return 0.5 * norm_squared(f)
    resid = evaluate_at_center(f, i - 1) - p.dataset.targets[i - 1]
    return 0.5 * float(resid @ resid)


def full_objective(p: Problem, f: Expansion) -> float:
    resid = evaluate_at_centers(f) - p.dataset.targets
    return 0.5 * p.q * norm_squared(f) + 0.5 * (1.0 - p.q) / p.n * float(np.sum(resid * resid))


def grad_representer(p: Problem, i: int, f: Expansion) -> Expansion:
    """Riesz representer of the differential of ``u_i`` at ``f``."""
    i = _check_component(p, i)
    if i == 0:
        return f.copy()
    resid = evaluate_at_center(f, i - 1) - p.dataset.targets[i - 1]
    return representer(f.gram, i - 1, resid)


def full_grad_representer(p: Problem, f: Expansion) -> Expansion:
    """Riesz representer of ``Du(f) = E[Du_I(f)]``."""
    resid = evaluate_at_centers(f) - p.dataset.targets
    return Expansion(p.q * f.coeffs + (1.0 - p.q) / p.n * resid, f.gram)


def _index_from_uniform(u, q: float, n: int):
    # 0 on [0, q); center block j on [q + j(1-q)/n, q + (j+1)(1-q)/n)
    j = np.minimum(np.floor((u - q) / (1.0 - q) * n), n - 1).astype(np.int64) + 1
    return np.where(u < q, 0, j)


def sample_index(p: Problem, rng: np.random.Generator) -> int:
    """Draw ``I`` with ``P(I=0)=q`` and ``P(I=i)=(1-q)/n``; one uniform per draw."""
    return int(_index_from_uniform(rng.random(), p.q, p.n))


def sample_indices(p: Problem, uniforms: np.ndarray) -> np.ndarray:
    """Vectorized ``sample_index`` applied to pre-drawn uniforms."""
    return _index_from_uniform(np.asarray(uniforms), p.q, p.n)


def constants(p: Problem, scaling=None) -> Constants:
    M = embedding_constant(p.kernel)
    rho = 1.0 if scaling is None else scaling.rho
    return Constants(lam=p.q, lambda_sq_lipschitz=p.q + (1.0 - p.q) * M**4, M=M, rho=rho)


def expected_grad_norm_sq_at(p: Problem, f: Expansion) -> float:
    """``E |Du_I(f)|^2`` as the exact finite sum over the index distribution."""
    resid = evaluate_at_centers(f) - p.dataset.targets
    diag = np.diag(p.gram.entries)
    rep_sq = diag * np.sum(resid * resid, axis=1)
    return p.q * norm_squared(f) + (1.0 - p.q) / p.n * math.fsum(rep_sq)
