"""Monte Carlo estimation of the mean squared H-error of the SGD iterates."""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .exact import ExactSolution, solve_ball
from .kernel import KernelSpec
from .objective import Constants, Problem, constants, expected_grad_norm_sq_at
from .rkhs import Dataset, Expansion, norm_squared
from .sgd import ScalingLaw, StepSchedule, make_schedule, simulate

__all__ = [
    "TARGETS",
    "SyntheticSpec",
    "synthesize_dataset",
    "ExperimentConfig",
    "ErrorCurve",
    "RateFit",
    "ConstantReport",
    "trial_rng",
    "default_checkpoints",
    "monte_carlo_error",
    "fit_rate",
    "rate_window",
    "constant_bound_report",
    "theoretical_bound",
    "shifted_problem_gradient",
    "WORKERS_ENV",
]

WORKERS_ENV = "SCATTER_SGD_WORKERS"


def _zero(x: np.ndarray, m: int) -> np.ndarray:
    return np.zeros((x.shape[0], m))


def _sines(x: np.ndarray, m: int) -> np.ndarray:
    # smooth fixed mix; coordinate l and output j set the frequency and phase
    d = x.shape[1]
    out = np.zeros((x.shape[0], m))
    for j in range(m):
        for l in range(d):
            out[:, j] += np.sin(np.pi * (l + j + 1) * x[:, l] + 0.5 * j) / (l + 1)
        out[:, j] += 0.5 * np.cos(2.0 * np.pi * np.sum(x, axis=1) / d + j)
    return out


def _linear(x: np.ndarray, m: int) -> np.ndarray:
    w = np.arange(1, x.shape[1] + 1, dtype=np.float64)
    return np.outer(x @ w / w.sum(), np.ones(m)) - 0.5


TARGETS = {"zero": _zero, "sines": _sines, "linear": _linear}


@dataclass(frozen=True)
class SyntheticSpec:
    n: int = 40
    d: int = 2
    m: int = 1
    fn: str = "sines"
    noise: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.n < 1 or self.d < 1 or self.m < 1:
            raise ValueError("n, d and m must be at least 1")
        if self.fn not in TARGETS:
            raise ValueError(f"unknown target function {self.fn!r}; choose from {sorted(TARGETS)}")
        if not (self.noise >= 0 and math.isfinite(self.noise)):
            raise ValueError("noise must be a nonnegative finite number")


def synthesize_dataset(spec: SyntheticSpec) -> Dataset:
    rng = np.random.default_rng(spec.seed)
    x = rng.random((spec.n, spec.d))
    while True:
        _, first = np.unique(x, axis=0, return_index=True)
        dup = np.setdiff1d(np.arange(spec.n), first)
        if dup.size == 0:
            break
        x[dup] = rng.random((dup.size, spec.d))
    y = TARGETS[spec.fn](x, spec.m)
    if spec.noise > 0:
        y = y + spec.noise * rng.standard_normal(y.shape)
    return Dataset(x, y)


def default_checkpoints(k_max: int = 2**14, start: int = 4) -> list[int]:
    cps = [2**e for e in range(start, int(math.log2(k_max)) + 1) if 2**e <= k_max]
    if not cps or cps[-1] != k_max:
        cps.append(k_max)
    return cps


@dataclass
class ExperimentConfig:
    synthetic: SyntheticSpec | None = field(default_factory=SyntheticSpec)
    data_path: str | None = None
    kernel: KernelSpec = field(default_factory=KernelSpec)
    q: float = 0.5
    r: float = math.inf
    s: float = 2.0
    trials: int = 100
    k_max: int = 2**14
    checkpoints: list = None
    scaling: ScalingLaw | None = None
    seed: int = 0
    workers: int | None = None

    def __post_init__(self):
        if self.trials < 2:
            raise ValueError("trials must be at least 2")
        if self.checkpoints is None:
            self.checkpoints = default_checkpoints(self.k_max)
        self.checkpoints = sorted(int(k) for k in self.checkpoints)
        if not self.checkpoints:
            raise ValueError("checkpoints must be nonempty")
        if self.checkpoints[0] < 1 or self.checkpoints[-1] > self.k_max:
            raise ValueError("checkpoints must lie in [1, k_max]")
        if self.synthetic is None and self.data_path is None:
            raise ValueError("need a synthetic dataset spec or a data file")
        if not self.s > 1:
            raise ValueError("s must exceed 1")

    def dataset(self) -> Dataset:
        if self.data_path is not None:
            from .io import read_dataset

            return read_dataset(self.data_path)
        return synthesize_dataset(self.synthetic)

    def problem(self) -> Problem:
        return Problem(self.dataset(), self.kernel, self.q, self.r)

    def to_dict(self) -> dict:
        out = {
            "synthetic": asdict(self.synthetic) if self.synthetic is not None and self.data_path is None else None,
            "data_path": self.data_path,
            "kernel": {"family": self.kernel.family.value, "bandwidth": self.kernel.bandwidth},
            "q": self.q,
            "r": "inf" if math.isinf(self.r) else self.r,
            "s": self.s,
            "trials": self.trials,
            "k_max": self.k_max,
            "checkpoints": list(self.checkpoints),
            "scaling": None if self.scaling is None else
            {"values": list(self.scaling.values), "probs": list(self.scaling.probs)},
            "seed": self.seed,
        }
        return out


def trial_rng(master_seed: int, trial: int) -> np.random.Generator:
    """Counter-based per-trial stream: depends only on ``(master_seed, trial)``."""
    return np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=(trial,)))


@dataclass
class ErrorCurve:
    k: np.ndarray
    mean: np.ndarray
    stderr: np.ndarray
    trials: int
    n_atoms_mean: np.ndarray = None
    max_norm_ratio: float | None = None

    def k_times_mean(self) -> np.ndarray:
        return self.k * self.mean


def _curve_from_rows(cps, err_rows: np.ndarray, atom_rows: np.ndarray, ratio) -> ErrorCurve:
    T = err_rows.shape[0]
    means, ses, atoms = [], [], []
    for j in range(err_rows.shape[1]):
        col = err_rows[:, j]
        mu = math.fsum(col) / T
        var = math.fsum((col - mu) ** 2) / (T - 1)
        means.append(mu)
        ses.append(math.sqrt(var / T))
        atoms.append(math.fsum(atom_rows[:, j].astype(np.float64)) / T)
    return ErrorCurve(np.asarray(cps, dtype=np.int64), np.array(means), np.array(ses), T,
                      np.array(atoms), ratio)


def _run_chunk(args):
    problem, sched, f_star_coeffs, cps, seed, trial_ids, law = args
    rngs = [trial_rng(seed, t) for t in trial_ids]
    f_star = Expansion(f_star_coeffs, problem.gram)
    batch = simulate(problem, sched, f_star, cps, rngs, law=law)
    return trial_ids, batch.err_sq, batch.n_atoms, batch.max_norm_ratio


def _resolve_workers(workers: int | None) -> int:
    if workers is None:
        env = os.environ.get(WORKERS_ENV)
        workers = int(env) if env else (os.cpu_count() or 1)
    return max(1, int(workers))


@dataclass
class Experiment:
    """Everything computed once per config and shared read-only by the trials."""

    config: ExperimentConfig
    problem: Problem
    solution: ExactSolution
    constants: Constants
    schedule: StepSchedule


def prepare(cfg: ExperimentConfig) -> Experiment:
    p = cfg.problem()
    sol = solve_ball(p)
    c = constants(p, cfg.scaling)
    return Experiment(cfg, p, sol, c, make_schedule(c, cfg.s))


def monte_carlo_error(cfg: ExperimentConfig, experiment: Experiment | None = None,
                      trial_order=None) -> ErrorCurve:
    """Mean and standard error of ``|F_k - f*|_H^2`` over independent trials.

    ``trial_order`` permutes how trials are grouped and merged; the result only
    depends on the set of trials because merging uses correctly rounded sums.
    """
    ex = experiment or prepare(cfg)
    order = list(range(cfg.trials)) if trial_order is None else list(trial_order)
    if sorted(order) != list(range(cfg.trials)):
        raise ValueError("trial_order must be a permutation of range(trials)")
    workers = min(_resolve_workers(cfg.workers), cfg.trials)
    chunks = [order[i::workers] for i in range(workers)]
    jobs = [(ex.problem, ex.schedule, ex.solution.f_star.coeffs, cfg.checkpoints, cfg.seed, ids, cfg.scaling)
            for ids in chunks if ids]
    if workers == 1:
        results = [_run_chunk(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_chunk, jobs))
    ncp = len(cfg.checkpoints)
    err = np.empty((cfg.trials, ncp))
    atoms = np.empty((cfg.trials, ncp), dtype=np.int64)
    ratio = None
    for ids, e, a, rr in results:
        err[ids] = e
        atoms[ids] = a
        if rr is not None:
            ratio = max(ratio or 0.0, float(np.max(rr)))
    return _curve_from_rows(cfg.checkpoints, err, atoms, ratio)


@dataclass
class RateFit:
    slope: float
    intercept: float
    window: tuple
    residual_rms: float
    points: int


def rate_window(ks) -> tuple:
    """Top half of the checkpoints (the asymptotic window)."""
    ks = sorted(int(k) for k in ks)
    lo = ks[len(ks) // 2]
    return lo, ks[-1]


def fit_rate(curve: ErrorCurve, window: tuple | None = None) -> RateFit:
    if window is None:
        window = rate_window(curve.k)
    lo, hi = window
    sel = (curve.k >= lo) & (curve.k <= hi)
    if np.count_nonzero(sel) < 4:
        raise ValueError("fit window needs at least 4 checkpoints")
    mean = curve.mean[sel]
    if np.any(mean <= 0):
        raise ValueError("degenerate curve")
    x = np.log(curve.k[sel].astype(np.float64))
    y = np.log(mean)
    A = np.column_stack([x, np.ones_like(x)])
    (slope, intercept), *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - (slope * x + intercept)
    return RateFit(float(slope), float(intercept), (int(lo), int(hi)),
                   float(np.sqrt(np.mean(resid**2))), int(sel.sum()))


def theoretical_bound(sched: StepSchedule, k, init_err_sq: float, grad_sq_at_star: float) -> np.ndarray:
    """Upper bound on ``E|F_k - f*|^2`` from iterating the one-step recursion.

    ``init_err_sq`` is ``|F_1 - f*|^2``; ``grad_sq_at_star`` is ``E|Du_I(f*)|^2``.
    """
    k = np.asarray(k, dtype=np.float64)
    s, b, lam = sched.s, sched.b, sched.lam
    transient = init_err_sq * ((b + 1.0) / (b + k)) ** s
    noise = 2.0 * sched.rho * grad_sq_at_star * (s / lam) ** 2 * (1.0 + 2.0 / b) ** s / (s - 1.0) / (k + b)
    return transient + noise


@dataclass
class ConstantReport:
    k_times_mean: list
    plateau: float
    window: tuple
    grad_norm_sq_at_fstar: float
    reference_scale: float
    bound: list
    within_bound: bool


def constant_bound_report(p: Problem, sol: ExactSolution, c: Constants, curve: ErrorCurve,
                          sched: StepSchedule | None = None, window: tuple | None = None) -> ConstantReport:
    if window is None:
        window = rate_window(curve.k)
    lo, hi = window
    sel = (curve.k >= lo) & (curve.k <= hi)
    km = curve.k_times_mean()
    top = km[sel]
    plateau = float(np.max(top) / np.min(top)) if np.all(top > 0) else math.inf
    g2 = expected_grad_norm_sq_at(p, sol.f_star)
    bound = []
    within = True
    if sched is not None:
        bound = theoretical_bound(sched, curve.k, norm_squared(sol.f_star), g2).tolist()
        # 3 standard errors of slack for Monte Carlo noise
        within = bool(np.all(curve.mean <= np.asarray(bound) + 3.0 * curve.stderr))
    return ConstantReport(km.tolist(), plateau, (int(lo), int(hi)), g2, g2 / c.lam**2, bound, within)


def shifted_problem_gradient(p: Problem, sol: ExactSolution) -> Expansion:
    """Gradient of ``f -> u(f + f*)`` at zero; vanishes for an interior minimizer."""
    from .objective import full_grad_representer

    return full_grad_representer(p, sol.f_star)
