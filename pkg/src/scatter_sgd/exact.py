"""Exact minimizer of the Tikhonov objective over a centered ball.

Stationarity of ``u`` in the center span reads ``(alpha I + G) C = Y`` with
``alpha = n q / (1 - q)``.  The ball constraint adds a multiplier ``mu`` to
``q``; ``mu`` is found by bisection on the decreasing map ``mu -> |f(mu)|_H``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .objective import Problem, full_grad_representer, full_objective
from .rkhs import Expansion, axpy, inner_product, norm, norm_squared

__all__ = [
    "ExactSolution",
    "BallSolveError",
    "OptimalityReport",
    "solve_unconstrained",
    "solve_ball",
    "verify_optimality",
    "random_in_ball",
]

BALL_RTOL = 1e-10
MAX_BISECTIONS = 200


class BallSolveError(RuntimeError):
    pass


@dataclass
class ExactSolution:
    f_star: Expansion
    multiplier: float = 0.0
    residual: float = 0.0
    trace: list = field(default_factory=list, repr=False)

    @property
    def norm_h(self) -> float:
        return norm(self.f_star)


def _shift(p: Problem, mu: float) -> float:
    return p.n * (p.q + mu) / (1.0 - p.q)


def _solve_shifted(p: Problem, mu: float):
    alpha = _shift(p, mu)
    y = p.dataset.targets
    c = p.gram.solve(y, shift=alpha)
    lhs = alpha * c + p.gram.entries @ c
    residual = float(np.max(np.abs(lhs - y)))
    return Expansion(c, p.gram), residual


def solve_unconstrained(p: Problem) -> ExactSolution:
    f, residual = _solve_shifted(p, 0.0)
    return ExactSolution(f, 0.0, residual)


def solve_ball(p: Problem) -> ExactSolution:
    free = solve_unconstrained(p)
    r = p.r
    if math.isinf(r) or free.norm_h <= r:
        return free

    lo, norm_lo = 0.0, free.norm_h
    hi = 1.0
    f_hi, res_hi = _solve_shifted(p, hi)
    norm_hi = norm(f_hi)
    trace = [(lo, norm_lo), (hi, norm_hi)]
    while norm_hi >= r:
        if norm_hi >= norm_lo:
            raise BallSolveError(f"ball solve failed: norm not decreasing on [{lo}, {hi}]")
        lo, norm_lo = hi, norm_hi
        hi *= 2.0
        if hi > 1e300:
            raise BallSolveError("ball solve failed: could not bracket the multiplier")
        f_hi, res_hi = _solve_shifted(p, hi)
        norm_hi = norm(f_hi)
        trace.append((hi, norm_hi))

    for _ in range(MAX_BISECTIONS):
        if abs(norm_hi - r) <= BALL_RTOL * r:
            return ExactSolution(f_hi, hi, res_hi, trace)
        mid = 0.5 * (lo + hi)
        if not lo < mid < hi:
            break
        f_mid, res_mid = _solve_shifted(p, mid)
        norm_mid = norm(f_mid)
        trace.append((mid, norm_mid))
        if not norm_hi <= norm_mid <= norm_lo:
            raise BallSolveError(
                f"ball solve failed: norm not monotone on [{lo}, {hi}] at mu={mid}"
            )
        if norm_mid >= r:
            lo, norm_lo = mid, norm_mid
        else:
            hi, norm_hi, f_hi, res_hi = mid, norm_mid, f_mid, res_mid
    if abs(norm_hi - r) <= BALL_RTOL * r:
        return ExactSolution(f_hi, hi, res_hi, trace)
    raise BallSolveError(
        f"ball solve failed: bracket [{lo}, {hi}] with norms [{norm_lo}, {norm_hi}], r={r}"
    )


def random_in_ball(p: Problem, rng: np.random.Generator, radius: float | None = None) -> Expansion:
    """Random expansion with norm at most ``radius`` (default ``p.r``, or 3 if unbounded)."""
    if radius is None:
        radius = p.r if math.isfinite(p.r) else 3.0
    c = rng.standard_normal((p.n, p.m))
    f = Expansion(c, p.gram)
    target = radius * rng.random() ** (1.0 / max(p.n * p.m, 1))
    nf = norm(f)
    if nf == 0.0:
        return f
    return Expansion(c * (target / nf), p.gram)


@dataclass
class OptimalityReport:
    min_value: float
    max_value: float
    worst_slack: float
    failures: int
    trials: int

    @property
    def passed(self) -> bool:
        return self.failures == 0


def verify_optimality(sol: ExactSolution, p: Problem, trials: int, rng: np.random.Generator,
                      tol: float = 1e-9) -> OptimalityReport:
    """Sample feasible ``g`` and check ``<Du(f*), g - f*> >= -tol (1 + |g - f*|)``."""
    grad = full_grad_representer(p, sol.f_star)
    values = []
    slack = math.inf
    failures = 0
    for t in range(trials):
        if t % 3 == 2 and math.isfinite(p.r):
            # boundary points probe the active constraint
            g = random_in_ball(p, rng)
            g = Expansion(g.coeffs * (p.r / max(norm(g), 1e-300)), p.gram)
        else:
            g = random_in_ball(p, rng)
        d = axpy(g, -1.0, sol.f_star)
        val = inner_product(grad, d)
        bound = -tol * (1.0 + norm(d))
        values.append(val)
        slack = min(slack, val - bound)
        if val < bound:
            failures += 1
    return OptimalityReport(min(values), max(values), slack, failures, trials)


def objective_gap(p: Problem, sol: ExactSolution, g: Expansion) -> float:
    return full_objective(p, g) - full_objective(p, sol.f_star)


def stationarity_norm(p: Problem, f: Expansion) -> float:
    return math.sqrt(max(norm_squared(full_grad_representer(p, f)), 0.0))
