import math

import numpy as np
import pytest

from scatter_sgd.exact import solve_ball, solve_unconstrained
from scatter_sgd.harness import theoretical_bound
from scatter_sgd.objective import Constants, constants, expected_grad_norm_sq_at
from scatter_sgd.rkhs import Expansion, axpy, evaluate, norm, norm_squared, project_ball, representer
from scatter_sgd.sgd import (
    ScalingLaw,
    SgdState,
    StepSchedule,
    binomial_atom_check,
    expected_next_error_sq,
    initial_state,
    make_schedule,
    one_step_bound,
    run,
    sgd_step,
    sgd_step_general,
    simulate,
)

from conftest import make_problem

TWO_POINT = ScalingLaw((0.5, 1.5), (0.5, 0.5))


class _FixedDraw:
    """Generator stand-in that always returns the same uniform."""

    def __init__(self, u):
        self.u = u

    def random(self):
        return self.u


class TestSchedule:
    def test_default_example(self):
        sched = make_schedule(Constants(lam=0.5, lambda_sq_lipschitz=1.0, M=1.0, rho=1.0), 2.0)
        assert sched.b == 16.0
        assert float(sched.eta(1)) == pytest.approx(4 / 17, rel=1e-15)
        assert float(sched.eta(1)) <= sched.eta_cap == 0.25

    def test_scaling_b(self):
        sched = make_schedule(constants(make_problem(q=0.5), TWO_POINT), 2.0)
        assert sched.b == 20.0

    @pytest.mark.parametrize("s", [1.0, 0.5, -2.0])
    def test_s_must_exceed_one(self, s):
        with pytest.raises(ValueError, match="s must exceed 1"):
            make_schedule(Constants(0.5, 1.0, 1.0), s)

    @pytest.mark.parametrize("q", [0.05, 0.5, 0.95])
    @pytest.mark.parametrize("s", [1.01, 2.0, 5.0])
    @pytest.mark.parametrize("law", [None, TWO_POINT])
    def test_invariants_over_range(self, q, s, law):
        sched = make_schedule(constants(make_problem(q=q), law), s)
        ks = np.arange(1, 2**14 + 1)
        eta = sched.eta(ks)
        assert sched.b >= 2 * s
        assert np.all(np.diff(eta) < 0)
        assert np.all(eta <= sched.eta_cap)
        assert np.all(sched.contraction(ks) <= 1 - sched.lam * eta)

    def test_recursion_sum_bounds(self):
        # brute-force the iterated products the rate bound is built from
        for q in (0.1, 0.5, 0.9):
            for law in (None, TWO_POINT):
                sched = make_schedule(constants(make_problem(q=q), law), 2.0)
                lam, s, b = sched.lam, sched.s, sched.b
                for n in (2, 5, 50, 500, 5000):
                    eta = sched.eta(np.arange(1, n))
                    tail = np.concatenate([np.cumsum(eta[::-1])[::-1][1:], [0.0]])
                    lhs = float(np.sum(eta**2 * np.exp(-lam * tail)))
                    rhs = (s / lam) ** 2 * (1 + 2 / b) ** s / (s - 1) / (n + b)
                    assert lhs <= rhs
                    assert math.exp(-lam * eta.sum()) <= ((b + 1) / (b + n)) ** s * (1 + 1e-12)


class TestScalingLaw:
    def test_rho(self):
        assert TWO_POINT.rho == 1.25
        assert ScalingLaw.identity().rho == 1.0

    def test_parse(self):
        assert ScalingLaw.parse("0.5:0.5,1.5:0.5") == TWO_POINT

    @pytest.mark.parametrize("values,probs,msg", [
        ((0.0,), (1.0,), "nonzero"),
        ((0.5, 1.5), (0.3, 0.3), "sum to 1"),
        ((1.0, 2.0), (0.5, 0.5), "mean 1"),
        ((1.0,), (1.0, 0.0), "matching"),
    ])
    def test_invalid(self, values, probs, msg):
        with pytest.raises(ValueError, match=msg):
            ScalingLaw(values, probs)

    def test_sampling_frequencies(self, rng):
        law = ScalingLaw((0.5, 1.0, 2.0), (0.4, 0.4, 0.2))
        vals = np.array([law.sample(rng) for _ in range(20_000)])
        for v, p in zip(law.values, law.probs):
            assert abs(np.mean(vals == v) - p) <= 4 * math.sqrt(p * (1 - p) / vals.size)


class TestStep:
    def test_shrink_branch(self):
        p = make_problem(n=1, m=1)
        sched = StepSchedule(s=2.0, lam=0.5, lambda_cap=1.0, rho=1.0, b=7.0)  # eta_1 = 0.5
        state = SgdState(k=1, f=Expansion(np.array([[2.0]]), p.gram))
        sgd_step(state, p, sched, _FixedDraw(0.0))
        np.testing.assert_allclose(state.f.coeffs, [[1.0]], rtol=1e-15)
        assert state.k == 2 and state.n_atoms == 0

    @pytest.mark.parametrize("r", [math.inf, 0.05])
    def test_first_data_step_from_zero(self, r):
        p = make_problem(n=4, m=2, r=r)
        sched = make_schedule(constants(p))
        state = initial_state(p)
        sgd_step(state, p, sched, _FixedDraw(0.99))  # last center
        eta = float(sched.eta(1))
        expected = project_ball(representer(p.gram, 3, eta * p.dataset.targets[3]), r)
        np.testing.assert_allclose(state.f.coeffs, expected.coeffs, rtol=1e-14)
        assert state.n_atoms == 1

    @pytest.mark.parametrize("r", [math.inf, 0.3])
    def test_specialized_equals_generic(self, r):
        p = make_problem(n=10, m=2, r=r, seed=4)
        sched = make_schedule(constants(p))
        a, b = initial_state(p), initial_state(p)
        ga, gb = np.random.default_rng(9), np.random.default_rng(9)
        for _ in range(1000):
            sgd_step(a, p, sched, ga)
            sgd_step_general(b, p, sched, ScalingLaw.identity(), gb)
            np.testing.assert_allclose(a.f.coeffs, b.f.coeffs, rtol=0, atol=1e-12)
        assert a.n_atoms == b.n_atoms

    def test_general_with_law_stays_in_ball(self):
        p = make_problem(n=10, m=1, r=0.2, seed=5)
        sched = make_schedule(constants(p, TWO_POINT))
        state = initial_state(p)
        g = np.random.default_rng(1)
        for _ in range(2000):
            sgd_step_general(state, p, sched, TWO_POINT, g)
            assert norm(state.f) <= p.r * (1 + 1e-10)

    def test_atom_mirror(self):
        p = make_problem(n=12, m=2, r=0.4, seed=6)
        sched = make_schedule(constants(p))
        state = initial_state(p, mirror=True)
        g = np.random.default_rng(2)
        for _ in range(2000):
            sgd_step(state, p, sched, g)
            a = state.atoms.evaluate_at_centers()
            b = evaluate(state.f, p.dataset.points)
            assert np.max(np.abs(a - b)) <= 1e-10 * np.max(np.abs(b))
            assert len(state.atoms) == state.n_atoms <= state.k - 1


class TestRun:
    def test_k_max_one(self, small_problem, rng):
        sol = solve_ball(small_problem)
        out = run(small_problem, make_schedule(constants(small_problem)), 1, [1], rng, sol)
        assert out == [(1, pytest.approx(norm_squared(sol.f_star), rel=1e-14), 0)]

    def test_bit_reproducible(self):
        p = make_problem(n=1, q=0.5)
        sched = make_schedule(constants(p))
        a = run(p, sched, 500, [1, 10, 100, 500], np.random.default_rng(3))
        b = run(p, sched, 500, [1, 10, 100, 500], np.random.default_rng(3))
        assert a == b

    def test_bad_checkpoints(self, small_problem, rng):
        with pytest.raises(ValueError):
            run(small_problem, make_schedule(constants(small_problem)), 10, [20], rng)

    def test_endpoints_decrease_over_seeds(self, default_problem):
        sol = solve_ball(default_problem)
        sched = make_schedule(constants(default_problem))
        rngs = [np.random.default_rng(s) for s in range(100)]
        batch = simulate(default_problem, sched, sol.f_star, [2**6, 2**14], rngs)
        assert np.all(batch.err_sq[:, 1] < batch.err_sq[:, 0])


class TestSimulate:
    @pytest.mark.parametrize("r,law", [(math.inf, None), (0.2, None), (math.inf, TWO_POINT), (0.2, TWO_POINT)])
    def test_matches_reference_engine(self, r, law):
        p = make_problem(n=9, m=2, r=r, q=0.4, seed=8)
        sol = solve_ball(p)
        sched = make_schedule(constants(p, law))
        cps = [1, 2, 7, 50, 300, 1000]
        seeds = [11, 12, 13]
        batch = simulate(p, sched, sol.f_star, cps, [np.random.default_rng(s) for s in seeds], law=law)
        for t, s in enumerate(seeds):
            ref = run(p, sched, cps[-1], cps, np.random.default_rng(s), sol, law=law)
            np.testing.assert_allclose(batch.err_sq[t], [e for _, e, _ in ref], rtol=1e-9, atol=1e-14)
            np.testing.assert_array_equal(batch.n_atoms[t], [a for _, _, a in ref])
        if math.isfinite(r):
            assert np.all(batch.max_norm_ratio <= 1 + 1e-10)

    def test_batch_composition_does_not_matter(self):
        p = make_problem(n=9, m=1, seed=8)
        sol = solve_ball(p)
        sched = make_schedule(constants(p))
        cps = [16, 256]
        full = simulate(p, sched, sol.f_star, cps, [np.random.default_rng(s) for s in range(6)])
        part = simulate(p, sched, sol.f_star, cps, [np.random.default_rng(s) for s in (4, 1)])
        np.testing.assert_allclose(part.err_sq, full.err_sq[[4, 1]], rtol=1e-12)


class TestBinomial:
    def test_half(self):
        p = make_problem(n=5, q=0.5)
        rep = binomial_atom_check(p, make_schedule(constants(p)), 101, 10_000, np.random.default_rng(0))
        assert rep.expected_mean == 50
        assert rep.band == pytest.approx(0.2)
        assert rep.passed
        assert abs(rep.mean - 50) <= 2
        assert rep.max_count <= 100
        assert abs(rep.variance - rep.expected_variance) <= 0.1 * rep.expected_variance

    def test_extreme_q(self):
        p = make_problem(n=5, q=0.999)
        rep = binomial_atom_check(p, make_schedule(constants(p)), 100, 10_000, np.random.default_rng(1))
        assert rep.expected_mean == pytest.approx(0.099)
        assert rep.passed

    def test_k2_support(self):
        p = make_problem(n=3, q=0.3)
        rep = binomial_atom_check(p, make_schedule(constants(p)), 2, 2000, np.random.default_rng(2))
        assert rep.min_count >= 0 and rep.max_count <= 1

    def test_k_too_small(self):
        p = make_problem()
        with pytest.raises(ValueError):
            binomial_atom_check(p, make_schedule(constants(p)), 1, 10, np.random.default_rng(0))


class TestOneStepRecursion:
    @pytest.mark.parametrize("law", [None, TWO_POINT])
    def test_pathwise_bound(self, rng, law):
        p = make_problem(n=6, m=2, q=0.35, seed=10)
        sched = make_schedule(constants(p, law))
        sol = solve_unconstrained(p)
        g2 = expected_grad_norm_sq_at(p, sol.f_star)
        for k in (1, 10, 100, 1000):
            for _ in range(100):
                f = axpy(sol.f_star, 1.0, Expansion(rng.standard_normal((p.n, p.m)) * rng.uniform(0.01, 2), p.gram))
                err = norm_squared(axpy(f, -1, sol.f_star))
                lhs = expected_next_error_sq(p, sched, k, f, sol.f_star, law)
                assert lhs <= one_step_bound(sched, k, err, g2) + 1e-10

    def test_conditional_expectation_by_sampling(self, rng):
        # Monte Carlo over I_k must agree with the exact branch sum
        p = make_problem(n=4, m=1, q=0.5, seed=1)
        sched = make_schedule(constants(p))
        sol = solve_unconstrained(p)
        f = Expansion(rng.standard_normal((p.n, 1)), p.gram)
        exact = expected_next_error_sq(p, sched, 3, f, sol.f_star)
        samples = []
        for _ in range(20_000):
            st = SgdState(k=3, f=f.copy())
            sgd_step(st, p, sched, rng)
            samples.append(norm_squared(axpy(st.f, -1, sol.f_star)))
        samples = np.asarray(samples)
        assert abs(samples.mean() - exact) <= 4 * samples.std(ddof=1) / math.sqrt(samples.size)


def test_theoretical_bound_dominates_mean(default_problem):
    sol = solve_ball(default_problem)
    sched = make_schedule(constants(default_problem))
    cps = [1, 16, 256, 4096]
    batch = simulate(default_problem, sched, sol.f_star, cps, [np.random.default_rng(s) for s in range(60)])
    mean = batch.err_sq.mean(axis=0)
    se = batch.err_sq.std(axis=0, ddof=1) / math.sqrt(60)
    bound = theoretical_bound(sched, cps, norm_squared(sol.f_star), expected_grad_norm_sq_at(default_problem, sol.f_star))
    assert np.all(mean <= bound + 3 * se)
