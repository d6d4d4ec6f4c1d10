"""Projected stochastic gradient descent in the kernel expansion space.

Two engines share one draw convention.  Each step consumes one uniform for the
index ``I_k`` and, only when the scaling law has more than one support point,
a second uniform for ``gamma_k``, from the same generator.  Identity-scaled
runs therefore replay plain runs draw for draw.

``sgd_step`` / ``sgd_step_general`` advance a single ``SgdState`` and are the
reference path.  ``simulate`` advances many independent trials at once on
stacked coefficient arrays and is what the Monte Carlo harness uses.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .exact import ExactSolution, solve_ball
from .objective import Constants, Problem, grad_representer, sample_index, sample_indices
from .rkhs import AtomList, Expansion, axpy, evaluate_at_center, norm, norm_squared, project_ball, zeros

__all__ = [
    "ScalingLaw",
    "StepSchedule",
    "SgdState",
    "make_schedule",
    "initial_state",
    "sgd_step",
    "sgd_step_general",
    "run",
    "simulate",
    "TrialBatch",
    "BinomialReport",
    "binomial_atom_check",
    "expected_next_error_sq",
    "one_step_bound",
]

_LAW_TOL = 1e-12


@dataclass(frozen=True)
class ScalingLaw:
    """Finite-support law of the scalar ``gamma`` in ``L_k = gamma_k I``."""

    values: tuple
    probs: tuple

    def __post_init__(self):
        v = tuple(float(x) for x in self.values)
        p = tuple(float(x) for x in self.probs)
        if not v or len(v) != len(p):
            raise ValueError("scaling law needs matching, nonempty values and probabilities")
        if any(not math.isfinite(x) for x in v + p) or any(x < 0 for x in p):
            raise ValueError("scaling law entries must be finite with nonnegative probabilities")
        if any(x == 0.0 for x in v):
            raise ValueError("scaling values must be nonzero")
        if abs(math.fsum(p) - 1.0) > _LAW_TOL:
            raise ValueError("scaling probabilities must sum to 1")
        if abs(math.fsum(a * b for a, b in zip(v, p)) - 1.0) > _LAW_TOL:
            raise ValueError("scaling law must have mean 1 (E[L] = I)")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "probs", p)

    @classmethod
    def identity(cls) -> "ScalingLaw":
        return cls((1.0,), (1.0,))

    @classmethod
    def parse(cls, text: str) -> "ScalingLaw":
        """Parse ``"0.5:0.5,1.5:0.5"`` as ``value:probability`` pairs."""
        values, probs = [], []
        for part in text.split(","):
            part = part.strip()
            if not part:
                continue
            try:
                v, p = part.split(":")
                values.append(float(v))
                probs.append(float(p))
            except ValueError as exc:
                raise ValueError(f"bad scaling entry {part!r}, expected value:probability") from exc
        return cls(tuple(values), tuple(probs))

    @property
    def trivial(self) -> bool:
        return len(self.values) == 1

    @property
    def rho(self) -> float:
        return math.fsum(p * v * v for v, p in zip(self.values, self.probs))

    def _from_uniform(self, u):
        cdf = np.cumsum(self.probs)
        idx = np.minimum(np.searchsorted(cdf, u, side="right"), len(self.values) - 1)
        return np.asarray(self.values)[idx]

    def sample(self, rng: np.random.Generator) -> float:
        if self.trivial:
            return self.values[0]
        return float(self._from_uniform(rng.random()))


@dataclass(frozen=True)
class StepSchedule:
    s: float
    lam: float
    lambda_cap: float
    rho: float
    b: float

    def eta(self, k):
        """Harmonic step ``(s / lambda) / (b + k)``; accepts scalars or arrays."""
        return (self.s / self.lam) / (self.b + np.asarray(k, dtype=np.float64))

    def contraction(self, k):
        """``1 - 2 lambda eta_k + 2 Lambda^2 rho eta_k^2``."""
        eta = self.eta(k)
        return 1.0 - 2.0 * self.lam * eta + 2.0 * self.lambda_cap**2 * self.rho * eta * eta

    @property
    def eta_cap(self) -> float:
        return self.lam / (2.0 * self.lambda_cap**2 * self.rho)


def make_schedule(c: Constants, s: float = 2.0) -> StepSchedule:
    if not s > 1:
        raise ValueError("s must exceed 1")
    b = 2.0 * c.rho * c.lambda_sq_lipschitz / c.lam**2 * s
    return StepSchedule(s=float(s), lam=c.lam, lambda_cap=c.lipschitz, rho=c.rho, b=b)


@dataclass
class SgdState:
    """Iterate ``F_k``; mutated in place by the step functions."""

    k: int
    f: Expansion
    atoms: AtomList | None = None
    n_atoms: int = 0


def initial_state(p: Problem, mirror: bool = False, f0: Expansion | None = None) -> SgdState:
    f = zeros(p.gram, p.m) if f0 is None else f0.copy()
    atoms = AtomList(p.gram, p.m) if mirror else None
    if atoms is not None and f0 is not None:
        for i in np.flatnonzero(np.any(f.coeffs != 0, axis=1)):
            atoms.append(int(i), f.coeffs[i])
    return SgdState(k=1, f=f, atoms=atoms)


def sgd_step(state: SgdState, p: Problem, sched: StepSchedule, rng: np.random.Generator) -> SgdState:
    """One step of the specialized scheme (regularizer shrink or data pull, then rescale)."""
    eta = float(sched.eta(state.k))
    idx = sample_index(p, rng)
    c = state.f.coeffs
    if idx == 0:
        c *= 1.0 - eta
        if state.atoms is not None:
            state.atoms.scale(1.0 - eta)
    else:
        i = idx - 1
        delta = eta * (p.dataset.targets[i] - evaluate_at_center(state.f, i))
        c[i] += delta
        if state.atoms is not None:
            state.atoms.append(i, delta)
        state.n_atoms += 1
        if math.isfinite(p.r):
            s_k = max(1.0, norm(state.f) / p.r)
            if s_k != 1.0:
                c *= 1.0 / s_k
                if state.atoms is not None:
                    state.atoms.scale(1.0 / s_k)
    state.k += 1
    return state


def sgd_step_general(state: SgdState, p: Problem, sched: StepSchedule, law: ScalingLaw,
                     rng: np.random.Generator) -> SgdState:
    """``F <- Proj(F - eta_k gamma_k R_H DU_k(F))`` with the index drawn before gamma."""
    eta = float(sched.eta(state.k))
    idx = sample_index(p, rng)
    gamma = law.sample(rng)
    step = grad_representer(p, idx, state.f)
    state.f = project_ball(axpy(state.f, -eta * gamma, step), p.r)
    if idx != 0:
        state.n_atoms += 1
    state.k += 1
    return state


def run(p: Problem, sched: StepSchedule, k_max: int, checkpoints, rng: np.random.Generator,
        solution: ExactSolution | None = None, law: ScalingLaw | None = None,
        mirror: bool = False, on_step=None):
    """Single trajectory from ``F_1 = 0``; returns ``[(k, |F_k - f*|^2, N_k), ...]``."""
    cps = sorted(int(k) for k in checkpoints)
    if not cps or cps[0] < 1 or cps[-1] > k_max:
        raise ValueError("checkpoints must be sorted integers in [1, k_max]")
    if solution is None:
        solution = solve_ball(p)
    state = initial_state(p, mirror=mirror)
    out = []
    pending = iter(cps)
    nxt = next(pending)
    while True:
        while nxt is not None and state.k == nxt:
            err = norm_squared(axpy(state.f, -1.0, solution.f_star))
            out.append((state.k, err, state.n_atoms))
            nxt = next(pending, None)
        if nxt is None:
            break
        if law is None:
            sgd_step(state, p, sched, rng)
        else:
            sgd_step_general(state, p, sched, law, rng)
        if on_step is not None:
            on_step(state)
    return out


@dataclass
class TrialBatch:
    """Per-trial records from ``simulate``: rows are trials, columns checkpoints."""

    checkpoints: np.ndarray
    err_sq: np.ndarray
    n_atoms: np.ndarray
    max_norm_ratio: np.ndarray = field(default=None)
    final_coeffs: np.ndarray = field(default=None, repr=False)


def simulate(p: Problem, sched: StepSchedule, f_star: Expansion, checkpoints,
             rngs, law: ScalingLaw | None = None, chunk: int = 4096) -> TrialBatch:
    """Advance one independent trajectory per generator, all trials stacked.

    Only elementwise operations couple a trial's arrays, so each trial's result
    does not depend on which other trials share the batch.
    """
    cps = np.array(sorted(int(k) for k in checkpoints), dtype=np.int64)
    if cps.size == 0 or cps[0] < 1:
        raise ValueError("checkpoints must be positive")
    rngs = list(rngs)
    T, n, m = len(rngs), p.n, p.m
    G = p.gram.entries
    Y = p.dataset.targets
    law = law if law is not None and not law.trivial else None
    finite_r = math.isfinite(p.r)

    C = np.zeros((T, n, m))
    E = np.zeros((T, n, m))  # G @ C, maintained by rank-one updates
    counts = np.zeros(T, dtype=np.int64)
    max_ratio = np.zeros(T)
    err = np.empty((T, cps.size))
    atoms = np.empty((T, cps.size), dtype=np.int64)
    tr = np.arange(T)

    def record(j):
        D = C - f_star.coeffs[None]
        err[:, j] = np.sum(D * np.matmul(G, D), axis=(1, 2))
        atoms[:, j] = counts

    k = 1
    ci = 0
    while ci < cps.size and cps[ci] == k:
        record(ci)
        ci += 1
    k_last = int(cps[-1])
    while k < k_last:
        steps = min(chunk, k_last - k)
        if law is None:
            u_idx = np.stack([g.random(steps) for g in rngs], axis=1)
            gam = None
        else:
            draws = np.stack([g.random((steps, 2)) for g in rngs], axis=1)
            u_idx = draws[:, :, 0]
            gam = law._from_uniform(draws[:, :, 1])
        idx_block = sample_indices(p, u_idx)
        for s in range(steps):
            eta = float(sched.eta(k))
            idx = idx_block[s]
            step = eta if gam is None else eta * gam[s]
            data = idx > 0
            i = np.where(data, idx - 1, 0)
            resid = Y[i] - E[tr, i]
            delta = np.where(data[:, None], step * resid if gam is None else step[:, None] * resid, 0.0)
            C[tr, i] += delta
            E += G[:, i].T[:, :, None] * delta[:, None, :]
            factor = np.where(data, 1.0, 1.0 - step)
            if finite_r:
                nrm = np.sqrt(np.maximum(np.sum(C * E, axis=(1, 2)), 0.0)) * np.abs(factor)
                s_k = np.maximum(1.0, nrm / p.r)
                if law is None:
                    # the plain scheme only rescales after a data pull
                    s_k = np.where(data, s_k, 1.0)
                factor = factor / s_k
                max_ratio = np.maximum(max_ratio, nrm / s_k / p.r)
            C *= factor[:, None, None]
            E *= factor[:, None, None]
            counts += data
            k += 1
            while ci < cps.size and cps[ci] == k:
                record(ci)
                ci += 1
    return TrialBatch(cps, err, atoms, max_ratio if finite_r else None, C)


@dataclass
class BinomialReport:
    k: int
    trials: int
    mean: float
    variance: float
    expected_mean: float
    expected_variance: float
    band: float
    max_count: int
    min_count: int

    @property
    def passed(self) -> bool:
        return (abs(self.mean - self.expected_mean) <= self.band
                and self.max_count <= self.k - 1 and self.min_count >= 0)


def binomial_atom_check(p: Problem, sched: StepSchedule, k: int, trials: int,
                        rng: np.random.Generator) -> BinomialReport:
    """Compare the summand count ``N_k`` of many trajectories with Binomial(k-1, 1-q)."""
    if k < 2:
        raise ValueError("k must be at least 2")
    rngs = rng.spawn(trials)
    batch = simulate(p, sched, zeros(p.gram, p.m), [k], rngs)
    counts = batch.n_atoms[:, 0].astype(np.float64)
    q = p.q
    return BinomialReport(
        k=k,
        trials=trials,
        mean=float(np.mean(counts)),
        variance=float(np.var(counts, ddof=1)) if trials > 1 else 0.0,
        expected_mean=(k - 1) * (1.0 - q),
        expected_variance=(k - 1) * q * (1.0 - q),
        band=4.0 * math.sqrt((k - 1) * q * (1.0 - q) / trials),
        max_count=int(counts.max()),
        min_count=int(counts.min()),
    )


def expected_next_error_sq(p: Problem, sched: StepSchedule, k: int, f: Expansion,
                           f_star: Expansion, law: ScalingLaw | None = None) -> float:
    """Exact ``E[|F_{k+1} - f*|^2 | F_k = f]`` summed over every branch of ``(I, gamma)``."""
    law = law or ScalingLaw.identity()
    eta = float(sched.eta(k))
    total = []
    for idx in range(p.n + 1):
        p_idx = p.q if idx == 0 else (1.0 - p.q) / p.n
        g = grad_representer(p, idx, f)
        for gamma, p_gamma in zip(law.values, law.probs):
            nxt = project_ball(axpy(f, -eta * gamma, g), p.r)
            total.append(p_idx * p_gamma * norm_squared(axpy(nxt, -1.0, f_star)))
    return math.fsum(total)


def one_step_bound(sched: StepSchedule, k: int, err_sq: float, grad_sq_at_star: float) -> float:
    """Right side of the one-step recursion with ``E[L*L]``-weighted gradient noise."""
    eta = float(sched.eta(k))
    return float(sched.contraction(k)) * err_sq + 2.0 * sched.rho * grad_sq_at_star * eta * eta
