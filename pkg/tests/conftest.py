import math

import numpy as np
import pytest

from scatter_sgd.harness import SyntheticSpec, synthesize_dataset
from scatter_sgd.kernel import KernelSpec
from scatter_sgd.objective import Problem
from scatter_sgd.rkhs import Dataset

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(20261016)


@pytest.fixture
def small_problem():
    ds = synthesize_dataset(SyntheticSpec(n=8, d=2, m=2, fn="sines", noise=0.1, seed=3))
    return Problem(ds, KernelSpec("gaussian", 0.5), q=0.3, r=math.inf)


@pytest.fixture
def default_problem():
    ds = synthesize_dataset(SyntheticSpec())
    return Problem(ds, KernelSpec("gaussian", 1.0), q=0.5, r=math.inf)


def make_problem(n=6, d=2, m=1, q=0.5, r=math.inf, family="gaussian", bandwidth=0.7, seed=0):
    g = np.random.default_rng(seed)
    return Problem(Dataset(g.random((n, d)), g.standard_normal((n, m))), KernelSpec(family, bandwidth), q, r)
