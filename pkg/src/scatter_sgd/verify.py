"""Seeded randomized checks of the identities and inequalities the solver relies on.

Every suite returns a :class:`SuiteResult` whose ``worst_slack`` is the
smallest observed ``allowed - violation`` margin; a suite passes iff that
margin is nonnegative on every instance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .exact import random_in_ball, solve_ball, solve_unconstrained, stationarity_norm, verify_optimality
from .kernel import KernelFamily, KernelSpec, eval_kernel, gram
from .objective import (
    Problem,
    constants,
    expected_grad_norm_sq_at,
    full_grad_representer,
    full_objective,
    grad_representer,
    loss_component,
)
from .rkhs import (
    AtomList,
    Dataset,
    Expansion,
    axpy,
    evaluate,
    inner_product,
    norm,
    norm_squared,
    project_ball,
    representer,
)
from .sgd import (
    ScalingLaw,
    expected_next_error_sq,
    initial_state,
    make_schedule,
    one_step_bound,
    sgd_step,
    sgd_step_general,
)

FAMILIES = tuple(KernelFamily)


@dataclass
class SuiteResult:
    name: str
    passed: bool
    worst_slack: float
    instances: int

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return f"[{tag}] {self.name:<28} instances={self.instances:<6} worst_slack={self.worst_slack:.3e}"


class _Slack:
    def __init__(self, name):
        self.name = name
        self.worst = math.inf
        self.count = 0

    def add(self, margin: float):
        self.count += 1
        if not margin >= self.worst:  # also catches nan
            self.worst = margin

    def result(self) -> SuiteResult:
        return SuiteResult(self.name, bool(self.worst >= 0.0), float(self.worst), self.count)


def random_problem(rng: np.random.Generator, n_max: int = 12, q=None, r=None, corrupt: bool = False) -> Problem:
    n = int(rng.integers(1, n_max + 1))
    d = int(rng.integers(1, 4))
    m = int(rng.integers(1, 4))
    x = rng.random((n, d))
    y = rng.standard_normal((n, m))
    spec = KernelSpec(FAMILIES[int(rng.integers(len(FAMILIES)))], float(rng.uniform(0.2, 1.0)))
    q = float(rng.uniform(0.05, 0.95)) if q is None else q
    r = float(rng.uniform(0.2, 3.0)) if r is None else r
    p = Problem(Dataset(x, y), spec, q, r)
    if corrupt:
        corrupt_gram(p, rng)
    return p


def corrupt_gram(p: Problem, rng: np.random.Generator, size: float = 1e-3) -> None:
    """Test hook: break the symmetry of the cached Gram matrix in place."""
    g = p.gram.entries.copy()
    g[np.triu_indices(p.n, 1)] += size * (1.0 + rng.random(p.n * (p.n - 1) // 2))
    g.setflags(write=False)
    p.gram.entries = g
    p.gram._factors.clear()


def _random_f(p: Problem, rng, scale: float = 1.0) -> Expansion:
    return Expansion(scale * rng.standard_normal((p.n, p.m)), p.gram)


def _pool(rng, size, **kw):
    return [random_problem(rng, **kw) for _ in range(size)]


def kernel_symmetry(rng, instances=1000, **_):
    acc = _Slack("kernel_symmetry")
    for t in range(instances):
        spec = KernelSpec(FAMILIES[t % 3], float(rng.uniform(0.3, 2.0)))
        d = int(rng.integers(1, 5))
        x, xp = rng.uniform(0, 2, d), rng.uniform(0, 2, d)
        a, b = eval_kernel(spec, x, xp), eval_kernel(spec, xp, x)
        acc.add(min(1.0 if a == b else -abs(a - b), 1.0 - a + 1e-300, a if a > 0 else -1.0))
    return acc.result()


def gram_factorization(rng, instances=100, **_):
    acc = _Slack("gram_factorization")
    for t in range(instances):
        n = int(rng.integers(1, 31))
        d = int(rng.integers(1, 4))
        spec = KernelSpec(FAMILIES[t % 3], float(rng.uniform(0.1, 0.5)))
        # box side grows with n so mean spacing stays above the bandwidth
        g = gram(spec, rng.random((n, d)) * n ** (1.0 / d))
        try:
            L = g.cholesky_factor
        except np.linalg.LinAlgError:
            acc.add(-1.0)
            continue
        err = float(np.max(np.abs(L @ L.T - g.entries)))
        sym = float(np.max(np.abs(g.entries - g.entries.T)))
        acc.add(min(1e-12 - err, -sym if sym else 0.0, -abs(float(np.max(np.abs(np.diag(g.entries) - 1.0))))))
    return acc.result()


def reproducing_property(rng, instances=1000, corrupt=False, **_):
    acc = _Slack("reproducing_property")
    pool = _pool(rng, 25, corrupt=corrupt)
    for t in range(instances):
        p = pool[t % len(pool)]
        f = _random_f(p, rng)
        i = int(rng.integers(p.n))
        v = rng.standard_normal(p.m)
        lhs = inner_product(representer(p.gram, i, v), f)
        rhs = float(v @ evaluate(f, p.dataset.points[i]))
        acc.add(1e-10 * (1.0 + abs(rhs)) - abs(lhs - rhs))
    return acc.result()


def evaluation_bound(rng, instances=1000, corrupt=False, **_):
    acc = _Slack("evaluation_bound")
    pool = _pool(rng, 25, corrupt=corrupt)
    for t in range(instances):
        p = pool[t % len(pool)]
        f = _random_f(p, rng)
        x = rng.uniform(-0.5, 1.5, p.dataset.d)
        M = constants(p).M
        acc.add(M * norm(f) * (1 + 1e-12) - float(np.linalg.norm(evaluate(f, x))))
    return acc.result()


def projection_nonexpansive(rng, instances=1000, corrupt=False, **_):
    acc = _Slack("projection_nonexpansive")
    pool = _pool(rng, 25, corrupt=corrupt)
    for t in range(instances):
        p = pool[t % len(pool)]
        r = float(rng.uniform(0.05, 3.0))
        f1, f2 = _random_f(p, rng, 2.0), _random_f(p, rng, 2.0)
        lhs = norm(axpy(project_ball(f2, r), -1.0, project_ball(f1, r)))
        rhs = norm(axpy(f2, -1.0, f1))
        acc.add(rhs + 1e-10 - lhs)
    return acc.result()


def projection_variational(rng, instances=1000, corrupt=False, **_):
    acc = _Slack("projection_variational")
    pool = _pool(rng, 25, corrupt=corrupt)
    for t in range(instances):
        p = pool[t % len(pool)]
        r = float(rng.uniform(0.05, 3.0))
        f = _random_f(p, rng, 2.0)
        h = random_in_ball(p, rng, radius=r)
        pf = project_ball(f, r)
        val = inner_product(axpy(f, -1.0, pf), axpy(h, -1.0, pf))
        acc.add(1e-10 - val)
        acc.add(r * (1 + 1e-12) - norm(pf))
    return acc.result()


def atom_agreement(rng, instances=200, **_):
    acc = _Slack("atom_agreement")
    pool = _pool(rng, 10)
    for t in range(instances):
        p = pool[t % len(pool)]
        atoms = AtomList(p.gram, p.m)
        for _ in range(int(rng.integers(1, 60))):
            if rng.random() < 0.3:
                atoms.scale(float(rng.uniform(0.2, 1.2)))
            else:
                atoms.append(int(rng.integers(p.n)), rng.standard_normal(p.m))
        direct = atoms.evaluate_at_centers()
        merged = evaluate(atoms.to_expansion(), p.dataset.points)
        scale = float(np.max(np.abs(direct))) + 1e-300
        acc.add(1e-12 - float(np.max(np.abs(direct - merged))) / max(scale, 1.0))
    return acc.result()


def lipschitz_expectation(rng, instances=1000, corrupt=False, **_):
    acc = _Slack("lipschitz_expectation")
    pool = _pool(rng, 25, corrupt=corrupt)
    for t in range(instances):
        p = pool[t % len(pool)]
        c = constants(p)
        f, g = _random_f(p, rng), _random_f(p, rng)
        d = axpy(f, -1.0, g)
        exact = p.q * norm_squared(d) + (1 - p.q) / p.n * sum(
            norm_squared(axpy(grad_representer(p, i, f), -1.0, grad_representer(p, i, g)))
            for i in range(1, p.n + 1))
        acc.add(c.lambda_sq_lipschitz * norm_squared(d) + 1e-10 - exact)
    return acc.result()


def strong_monotonicity(rng, instances=1000, corrupt=False, **_):
    acc = _Slack("strong_monotonicity")
    pool = _pool(rng, 25, corrupt=corrupt)
    for t in range(instances):
        p = pool[t % len(pool)]
        f, g = _random_f(p, rng), _random_f(p, rng)
        d = axpy(f, -1.0, g)
        via_grad = inner_product(axpy(full_grad_representer(p, f), -1.0, full_grad_representer(p, g)), d)
        vals = evaluate(d, p.dataset.points)
        direct = p.q * norm_squared(d) + (1 - p.q) / p.n * float(np.sum(vals * vals))
        acc.add(1e-10 * max(1.0, abs(direct)) - abs(via_grad - direct))
        acc.add(via_grad - p.q * norm_squared(d) + 1e-10)
    return acc.result()


def gradient_fd(rng, instances=200, **_):
    acc = _Slack("gradient_fd")
    pool = _pool(rng, 20)
    h = 1e-5
    for t in range(instances):
        p = pool[t % len(pool)]
        f, phi = _random_f(p, rng), _random_f(p, rng)
        i = int(rng.integers(0, p.n + 1))
        for fun, grad in (
            (lambda z: loss_component(p, i, z), grad_representer(p, i, f)),
            (lambda z: full_objective(p, z), full_grad_representer(p, f)),
        ):
            fd = (fun(axpy(f, h, phi)) - fun(axpy(f, -h, phi))) / (2 * h)
            an = inner_product(grad, phi)
            acc.add(1e-6 - abs(fd - an) / max(abs(an), 1e-3))
    return acc.result()


def exact_solver(rng, instances=40, **_):
    acc = _Slack("exact_solver")
    for t in range(instances):
        p0 = random_problem(rng, n_max=15, r=math.inf)
        free = solve_unconstrained(p0)
        acc.add(1e-10 * (1 + float(np.max(np.abs(p0.dataset.targets)))) - free.residual)
        acc.add(1e-9 - stationarity_norm(p0, free.f_star))
        rep = verify_optimality(free, p0, 25, rng)
        acc.add(rep.worst_slack)
        if free.norm_h == 0:
            continue
        r = 0.5 * free.norm_h
        p1 = Problem(p0.dataset, p0.kernel, p0.q, r)
        sol = solve_ball(p1)
        acc.add(1e-10 * r - abs(sol.norm_h - r))
        acc.add(1e-8 * r - sol.multiplier * abs(r - sol.norm_h))
        rep = verify_optimality(sol, p1, 25, rng)
        acc.add(rep.worst_slack)
    return acc.result()


def schedule_inequality(rng, instances=20, k_max=2**14, **_):
    acc = _Slack("schedule_inequality")
    ks = np.arange(1, k_max + 1)
    for t in range(instances):
        q = float(rng.uniform(0.05, 0.95))
        p = random_problem(rng, n_max=3, q=q)
        law = ScalingLaw.identity() if t % 2 == 0 else ScalingLaw((0.5, 1.5), (0.5, 0.5))
        sched = make_schedule(constants(p, law), float(rng.uniform(1.1, 4.0)))
        eta = sched.eta(ks)
        lhs = sched.contraction(ks)
        acc.add(float(np.min(1.0 - sched.lam * eta - lhs)) + 1e-15)
        acc.add(float(np.min(sched.eta_cap - eta)))
        acc.add(float(np.min(-np.diff(eta))))
    return acc.result()


def one_step_recursion(rng, instances=100, **_):
    acc = _Slack("one_step_recursion")
    pool = _pool(rng, 10, n_max=8, r=math.inf)
    for t in range(instances):
        p = pool[t % len(pool)]
        law = None if t % 2 == 0 else ScalingLaw((0.5, 1.5), (0.5, 0.5))
        sched = make_schedule(constants(p, law), 2.0)
        sol = solve_unconstrained(p)
        g2 = expected_grad_norm_sq_at(p, sol.f_star)
        for k in (1, 10, 100, 1000):
            f = axpy(sol.f_star, 1.0, _random_f(p, rng, float(rng.uniform(0.01, 2.0))))
            err = norm_squared(axpy(f, -1.0, sol.f_star))
            lhs = expected_next_error_sq(p, sched, k, f, sol.f_star, law)
            acc.add(one_step_bound(sched, k, err, g2) - lhs + 1e-10)
    return acc.result()


def sgd_feasibility(rng, instances=20, steps=300, **_):
    acc = _Slack("sgd_feasibility")
    for t in range(instances):
        p = random_problem(rng, n_max=10, r=float(rng.uniform(0.05, 1.0)))
        law = None if t % 2 == 0 else ScalingLaw((0.5, 1.5), (0.5, 0.5))
        sched = make_schedule(constants(p, law), 2.0)
        state = initial_state(p)
        g = np.random.default_rng(int(rng.integers(2**32)))
        for _ in range(steps):
            if law is None:
                sgd_step(state, p, sched, g)
            else:
                sgd_step_general(state, p, sched, law, g)
            acc.add(p.r * (1 + 1e-10) - norm(state.f))
    return acc.result()


def dual_representation(rng, instances=10, steps=500, **_):
    acc = _Slack("dual_representation")
    for t in range(instances):
        p = random_problem(rng, n_max=10, r=math.inf if t % 2 else float(rng.uniform(0.2, 1.0)))
        sched = make_schedule(constants(p), 2.0)
        state = initial_state(p, mirror=True)
        g = np.random.default_rng(int(rng.integers(2**32)))
        for _ in range(steps):
            sgd_step(state, p, sched, g)
            a = state.atoms.evaluate_at_centers()
            b = p.gram.entries @ state.f.coeffs
            rel = float(np.max(np.abs(a - b))) / max(float(np.max(np.abs(b))), 1e-300)
            acc.add(min(1e-10 - rel if np.any(b) else -float(np.max(np.abs(a))),
                        0.0 if len(state.atoms) == state.n_atoms else -1.0))
    return acc.result()


SUITES = (
    kernel_symmetry,
    gram_factorization,
    reproducing_property,
    evaluation_bound,
    projection_nonexpansive,
    projection_variational,
    atom_agreement,
    lipschitz_expectation,
    strong_monotonicity,
    gradient_fd,
    exact_solver,
    schedule_inequality,
    one_step_recursion,
    sgd_feasibility,
    dual_representation,
)

RKHS_SUITES = (reproducing_property, projection_nonexpansive, projection_variational, atom_agreement)

_DEFAULT_INSTANCES = {
    "kernel_symmetry": 1000,
    "gram_factorization": 100,
    "reproducing_property": 1000,
    "evaluation_bound": 1000,
    "projection_nonexpansive": 1000,
    "projection_variational": 1000,
    "atom_agreement": 1000,
    "lipschitz_expectation": 1000,
    "strong_monotonicity": 1000,
    "gradient_fd": 200,
    "exact_solver": 40,
    "schedule_inequality": 20,
    "one_step_recursion": 100,
    "sgd_feasibility": 20,
    "dual_representation": 10,
}


def run_suites(seed: int = 0, heavy: bool = False, corrupt_gram: bool = False, suites=SUITES):
    factor = 10 if heavy else 1
    results = []
    for i, suite in enumerate(suites):
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(i,)))
        results.append(suite(rng, instances=_DEFAULT_INSTANCES[suite.__name__] * factor, corrupt=corrupt_gram))
    return results
