"""
`hiermap` command line: solve, check, sweep, rates and report subcommands.

Exit codes: 0 success, 1 configuration error, 2 non-convergence, 3 property or bound violation.
"""
import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

import pydantic

from .bench import Bench
from .checks import suite_names
from .config import load_rates_config, load_run_config, load_sweep_spec
from .constants import EXIT_CONFIG_ERROR, EXIT_NOT_CONVERGED, EXIT_OK, EXIT_VIOLATION, THREADS_ENV
from .exceptions import ConfigError, HierMapError, PropertyViolation, SolverError, ValidationError
from .storage import read_report, read_trials_csv

logger = logging.getLogger(__name__)


def _fail(message: str, code: int) -> int:
    print(f"error: {message}", file=sys.stderr)
    return code


def cmd_solve(config: str, seed: Optional[int] = None, out: Optional[str] = None,
              threads: Optional[int] = None) -> int:
    try:
        cfg = load_run_config(config)
        if seed is not None:
            cfg.problem.seed = seed
        with Bench(threads=threads, out_dir=out) as bench:
            outcome = bench.solves.run(cfg)
    except (ConfigError, ValidationError) as e:
        return _fail(str(e), EXIT_CONFIG_ERROR)
    except SolverError as e:
        return _fail(str(e), EXIT_NOT_CONVERGED)
    report = outcome.report
    print(report.model_dump_json(by_alias=True, indent=2))
    if not report.converged:
        return _fail(f"no convergence within {cfg.solver.max_iters} iterations", EXIT_NOT_CONVERGED)
    return EXIT_OK


def cmd_check(suite: str, cases: Optional[int] = None, seed: int = 0, threads: Optional[int] = None) -> int:
    try:
        with Bench(threads=threads) as bench:
            if suite == "all":
                results = bench.checks.run_all(cases, seed)
            else:
                results = [bench.checks.run(suite, cases, seed)]
    except (ConfigError, ValidationError) as e:
        return _fail(str(e), EXIT_CONFIG_ERROR)
    code = EXIT_OK
    for result in results:
        print(f"{result.suite}: {result.passed} passed, {result.failed} failed of {result.cases}")
        try:
            result.raise_for_violation()
        except PropertyViolation as e:
            print(f"reproducer: {json.dumps(e.reproducer, default=str)}")
            code = EXIT_VIOLATION
    return code


def cmd_sweep(config: str, seed: Optional[int] = None, out: Optional[str] = None,
              threads: Optional[int] = None) -> int:
    try:
        spec = load_sweep_spec(config)
        if seed is not None:
            spec = spec.model_copy(update={"master_seed": seed})
        with Bench(threads=threads, out_dir=out or "out") as bench:
            report = bench.sweeps.run(spec)
    except (ConfigError, ValidationError) as e:
        return _fail(str(e), EXIT_CONFIG_ERROR)
    done = sum(cell.completed for cell in report.cells)
    print(f"cells completed: {done}/{len(report.cells)}")
    for fit in report.series_fits:
        print(f"eta={fit.eta:g} s_or_Rq={fit.s_or_Rq:g}: slope {fit.slope:.3f} [{fit.ci_low:.3f}, {fit.ci_high:.3f}]")
    return EXIT_OK if report.completed else _fail("some cells recorded failed trials", EXIT_NOT_CONVERGED)


def cmd_rates(config: str, seed: Optional[int] = None, out: Optional[str] = None,
              threads: Optional[int] = None) -> int:
    try:
        cfg = load_rates_config(config)
        if seed is not None:
            cfg = cfg.model_copy(update={"master_seed": seed})
        with Bench(threads=threads, out_dir=out or "out") as bench:
            report = bench.rates.run(cfg)
    except (ConfigError, ValidationError) as e:
        return _fail(str(e), EXIT_CONFIG_ERROR)
    print(f"hypotheses satisfied: {report.hypothesis_fraction:.0%} of {len(report.trials)} trials")
    print(f"bound violations: {report.violations}")
    return EXIT_VIOLATION if report.violations else EXIT_OK


def cmd_report(path: str) -> int:
    """Re-read a sweep report and its trial CSV, check they agree and print the fits."""
    report_path = Path(path)
    try:
        report = read_report(report_path)
        trials_path = report_path.with_name("trials.csv")
        if trials_path.exists():
            rows = read_trials_csv(trials_path)
            expected = sum(len(cell.trials) for cell in report.cells)
            if len(rows) != expected:
                raise ValidationError(f"{trials_path} has {len(rows)} rows, report lists {expected} trials")
    except (OSError, HierMapError, pydantic.ValidationError) as e:
        return _fail(str(e), EXIT_CONFIG_ERROR)
    print(f"cells: {len(report.cells)}, completed: {report.completed}")
    if report.fits is not None:
        fit = report.fits
        print(f"slope {fit.slope:.3f} [{fit.ci_low:.3f}, {fit.ci_high:.3f}] over {fit.points} points")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hiermap", description="Hierarchical-Bayesian MAP estimation bench")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="-v for info, -vv for debug")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, config: bool = True) -> None:
        if config:
            p.add_argument("--config", required=True, help="configuration file")
        p.add_argument("--seed", type=int, help="overrides the configured seed")
        p.add_argument("--threads", type=int, help=f"worker threads (default ${THREADS_ENV} or CPU count)")

    p = sub.add_parser("solve", help="run one solve")
    common(p)
    p.add_argument("--out", help="output directory (default from [output] dir)")

    p = sub.add_parser("check", help="run a property suite")
    common(p, config=False)
    p.add_argument("--suite", required=True, choices=suite_names() + ["all"])
    p.add_argument("--cases", type=int, help="number of cases (suite default otherwise)")

    p = sub.add_parser("sweep", help="run a rate-scaling sweep")
    common(p)
    p.add_argument("--out", help="output directory (default ./out)")

    p = sub.add_parser("rates", help="run certified-bound trials")
    common(p)
    p.add_argument("--out", help="output directory (default ./out)")

    p = sub.add_parser("report", help="validate a sweep report and print its fits")
    p.add_argument("path", help="report.json written by sweep")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    level = {0: logging.WARNING, 1: logging.INFO}.get(args.verbose, logging.DEBUG)
    logging.basicConfig(level=level, format="%(asctime)s %(name)s %(levelname)s %(message)s")

    try:
        if args.command == "solve":
            return cmd_solve(args.config, args.seed, args.out, args.threads)
        if args.command == "check":
            return cmd_check(args.suite, args.cases, args.seed or 0, args.threads)
        if args.command == "sweep":
            return cmd_sweep(args.config, args.seed, args.out, args.threads)
        if args.command == "rates":
            return cmd_rates(args.config, args.seed, args.out, args.threads)
        return cmd_report(args.path)
    except ConfigError as e:
        return _fail(str(e), EXIT_CONFIG_ERROR)


if __name__ == "__main__":
    sys.exit(main())
