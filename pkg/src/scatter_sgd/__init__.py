"""Projected SGD for kernel scattered-data approximation, with an exact oracle."""

__version__ = "0.1.0"

from .kernel import KernelFamily, KernelSpec, eval_kernel, embedding_constant, gram
from .rkhs import Dataset, Expansion, AtomList
from .objective import Problem, Constants, constants
from .exact import solve_ball, solve_unconstrained
from .sgd import ScalingLaw, make_schedule, sgd_step, sgd_step_general, run
from .harness import ExperimentConfig, SyntheticSpec, monte_carlo_error, fit_rate

__all__ = [
    "KernelFamily",
    "KernelSpec",
    "eval_kernel",
    "embedding_constant",
    "gram",
    "Dataset",
    "Expansion",
    "AtomList",
    "Problem",
    "Constants",
    "constants",
    "solve_ball",
    "solve_unconstrained",
    "ScalingLaw",
    "make_schedule",
    "sgd_step",
    "sgd_step_general",
    "run",
    "ExperimentConfig",
    "SyntheticSpec",
    "monte_carlo_error",
    "fit_rate",
]
