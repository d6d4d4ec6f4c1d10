"""Command-line entry point.

Exit codes: 0 success, 1 gate or suite failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import logging
import math
import platform
import sys
import time
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .exact import BallSolveError, solve_ball
from .harness import (
    ExperimentConfig,
    SyntheticSpec,
    TARGETS,
    constant_bound_report,
    fit_rate,
    monte_carlo_error,
    prepare,
    synthesize_dataset,
    trial_rng,
)
from .io import read_dataset, write_coeffs, write_curve, write_dataset, write_json
from .kernel import KernelFamily, KernelSpec, NotPositiveDefiniteError
from .objective import Problem, constants, full_objective
from .sgd import ScalingLaw, make_schedule, run
from .verify import run_suites

log = logging.getLogger("scatter_sgd")

SLOPE_GATE = (-1.3, -0.8)
PLATEAU_GATE = 3.0

EXIT_OK, EXIT_GATE, EXIT_CONFIG = 0, 1, 2


class ConfigError(Exception):
    pass


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def _radius(text):
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError("r must be positive or inf")
    return v


def _add_problem_flags(p: argparse.ArgumentParser, data_required: bool):
    p.add_argument("--data", required=data_required, help="dataset CSV with header x1..xd,y1..ym")
    p.add_argument("--kernel", choices=[f.value for f in KernelFamily], default="gaussian")
    p.add_argument("--bandwidth", type=float, default=1.0)
    p.add_argument("--q", type=float, default=0.5)
    p.add_argument("--r", type=_radius, default=math.inf, help="ball radius (default inf)")


def _add_synthetic_flags(p: argparse.ArgumentParser):
    p.add_argument("--n", type=_positive_int, default=40)
    p.add_argument("--d", type=_positive_int, default=2)
    p.add_argument("--m", type=_positive_int, default=1)
    p.add_argument("--fn", choices=sorted(TARGETS), default="sines")
    p.add_argument("--noise", type=float, default=0.1)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="scatter-sgd", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write a synthetic scattered dataset")
    _add_synthetic_flags(g)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)

    s = sub.add_parser("solve-exact", help="exact minimizer over the ball")
    _add_problem_flags(s, data_required=True)
    s.add_argument("--out", required=True, help="output prefix: <out>_coeffs.csv, <out>_solution.json")

    r = sub.add_parser("sgd-run", help="single SGD trajectory, error at checkpoints as CSV")
    _add_problem_flags(r, data_required=True)
    r.add_argument("--s", type=float, default=2.0)
    r.add_argument("--kmax", type=_positive_int, default=2**14)
    r.add_argument("--scaling", default=None)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--out", required=True)

    e = sub.add_parser("experiment", help="Monte Carlo rate experiment with gates")
    _add_problem_flags(e, data_required=False)
    _add_synthetic_flags(e)
    e.add_argument("--data-seed", type=int, default=0)
    e.add_argument("--s", type=float, default=2.0)
    e.add_argument("--trials", type=int, default=100)
    e.add_argument("--kmax", type=_positive_int, default=2**14)
    e.add_argument("--scaling", default=None, help='e.g. "0.5:0.5,1.5:0.5"')
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--workers", type=_positive_int, default=None)
    e.add_argument("--out-prefix", required=True)

    v = sub.add_parser("verify", help="run every invariant suite on seeded random instances")
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--heavy", action="store_true", help="10x instance counts")
    v.add_argument("--corrupt-gram", action="store_true", help=argparse.SUPPRESS)
    return parser


def _kernel(args) -> KernelSpec:
    try:
        return KernelSpec(args.kernel, args.bandwidth)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _problem(args) -> Problem:
    try:
        ds = read_dataset(args.data)
        return Problem(ds, _kernel(args), args.q, args.r)
    except (OSError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def _scaling(text):
    if text is None:
        return None
    try:
        return ScalingLaw.parse(text)
    except ValueError as exc:
        raise ConfigError(f"--scaling: {exc}") from exc


def cmd_gen_data(args) -> int:
    try:
        spec = SyntheticSpec(args.n, args.d, args.m, args.fn, args.noise, args.seed)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    write_dataset(synthesize_dataset(spec), args.out)
    log.info("wrote %s", args.out)
    return EXIT_OK


def cmd_solve_exact(args) -> int:
    p = _problem(args)
    try:
        sol = solve_ball(p)
    except (BallSolveError, NotPositiveDefiniteError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_GATE
    write_coeffs(sol.f_star.coeffs, f"{args.out}_coeffs.csv")
    write_json({
        "norm_h": sol.norm_h,
        "objective": full_objective(p, sol.f_star),
        "multiplier": sol.multiplier,
        "residual": sol.residual,
    }, f"{args.out}_solution.json")
    return EXIT_OK


def cmd_sgd_run(args) -> int:
    p = _problem(args)
    law = _scaling(args.scaling)
    if not args.s > 1:
        raise ConfigError("s must exceed 1")
    sched = make_schedule(constants(p, law), args.s)
    cps = sorted({1, *[2**e for e in range(0, int(math.log2(args.kmax)) + 1)], args.kmax})
    rows = run(p, sched, args.kmax, cps, trial_rng(args.seed, 0), law=law)
    with open(args.out, "w") as fh:
        fh.write("k,error_sq,n_atoms\n")
        for k, err, na in rows:
            fh.write(f"{k},{err:.17g},{na}\n")
    return EXIT_OK


def experiment_config(args) -> ExperimentConfig:
    if args.trials < 2:
        raise ConfigError("trials must be at least 2")
    try:
        synthetic = None
        if args.data is None:
            synthetic = SyntheticSpec(args.n, args.d, args.m, args.fn, args.noise, args.data_seed)
        return ExperimentConfig(
            synthetic=synthetic, data_path=args.data, kernel=_kernel(args), q=args.q, r=args.r,
            s=args.s, trials=args.trials, k_max=args.kmax, scaling=_scaling(args.scaling),
            seed=args.seed, workers=args.workers,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def run_experiment(cfg: ExperimentConfig, prefix: str) -> tuple[dict, int]:
    t0 = time.perf_counter()
    try:
        ex = prepare(cfg)
    except (OSError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    curve = monte_carlo_error(cfg, ex)
    try:
        fit = fit_rate(curve)
    except ValueError as exc:
        raise ConfigError(f"cannot fit rate: {exc}") from exc
    rep = constant_bound_report(ex.problem, ex.solution, ex.constants, curve, ex.schedule)
    slope_pass = SLOPE_GATE[0] <= fit.slope <= SLOPE_GATE[1]
    plateau_pass = rep.plateau <= PLATEAU_GATE
    c = ex.constants
    curve_file = f"{prefix}_curve.csv"
    Path(curve_file).parent.mkdir(parents=True, exist_ok=True)
    write_curve(curve, curve_file)
    summary = {
        "config": cfg.to_dict(),
        "constants": {"lambda": c.lam, "lambda_sq": c.lambda_sq_lipschitz, "M": c.M, "rho": c.rho,
                      "b": ex.schedule.b, "s": ex.schedule.s},
        "curve_file": curve_file,
        "slope": fit.slope,
        "intercept": fit.intercept,
        "fit_window": list(fit.window),
        "residual_rms": fit.residual_rms,
        "plateau": rep.plateau,
        "k_times_mean": rep.k_times_mean,
        "grad_norm_sq_at_fstar": rep.grad_norm_sq_at_fstar,
        "reference_scale": rep.reference_scale,
        "theoretical_bound": rep.bound,
        "within_theoretical_bound": rep.within_bound,
        "fstar_norm_h": ex.solution.norm_h,
        "multiplier": ex.solution.multiplier,
        "max_norm_ratio": curve.max_norm_ratio,
        "gates": {"slope_pass": slope_pass, "plateau_pass": plateau_pass},
    }
    summary_file = f"{prefix}_summary.json"
    write_json(summary, summary_file)
    manifest = {
        "config": cfg.to_dict(),
        "seed": cfg.seed,
        "versions": {"scatter_sgd": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                     "python": platform.python_version()},
        "outputs": {"curve": curve_file, "summary": summary_file, "manifest": f"{prefix}_manifest.json"},
        "duration_s": time.perf_counter() - t0,
    }
    write_json(manifest, f"{prefix}_manifest.json")
    failed = [name for name, ok in (("slope", slope_pass), ("plateau", plateau_pass)) if not ok]
    return summary, (EXIT_GATE if failed else EXIT_OK)


def cmd_experiment(args) -> int:
    cfg = experiment_config(args)
    summary, code = run_experiment(cfg, args.out_prefix)
    print(f"slope={summary['slope']:.4f} (gate {SLOPE_GATE}) plateau={summary['plateau']:.4f} "
          f"(gate <= {PLATEAU_GATE})")
    for name, ok in summary["gates"].items():
        if not ok:
            print(f"gate failed: {name.removesuffix('_pass')}", file=sys.stderr)
    return code


def cmd_verify(args) -> int:
    results = run_suites(seed=args.seed, heavy=args.heavy, corrupt_gram=args.corrupt_gram)
    for res in results:
        print(res.line())
    ok = all(r.passed for r in results)
    print("all suites passed" if ok else "suite failures: " + ", ".join(r.name for r in results if not r.passed))
    return EXIT_OK if ok else EXIT_GATE


COMMANDS = {
    "gen-data": cmd_gen_data,
    "solve-exact": cmd_solve_exact,
    "sgd-run": cmd_sgd_run,
    "experiment": cmd_experiment,
    "verify": cmd_verify,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
