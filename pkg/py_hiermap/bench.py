import asyncio
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import stats

from .checks import run_suite, suite_names
from .config import RatesConfig, RunConfig
from .constants import FIT_CONFIDENCE, MIN_FIT_POINTS, RSC_TAU_SQ_FACTOR, THREADS_ENV
from .exceptions import ConfigError, HierMapError, ValidationError
from .frames import equal_groups, make_tight_frame
from .models import (
    BoundKind,
    CellReport,
    ConvergenceTrace,
    ExperimentReport,
    HierBaseModel,
    Hypermodel,
    LambdaRule,
    Problem,
    RatesReport,
    RhsParams,
    SlopeFit,
    SolveReport,
    SuiteResult,
    SweepSpec,
    TrialRecord,
    TruthKind,
    TruthSpec,
    Variant,
    Vector,
)
from .solver import linear_rate_estimate, solve
from .storage import load_problem, save_problem, write_plot_csv, write_report, write_trace_csv, write_trials_csv, write_vector
from .synth import derive_seed, exact_support, make_problem, threshold_support
from .theory import corollary_rate, error_radius, lambda_rule, lambda_threshold, rsc_estimate

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

# ==========================================
# Trial and cell computations
# ==========================================


def resolve_threads(threads: Optional[int] = None) -> int:
    """Explicit value, else $HIERMAP_THREADS, else the CPU count."""
    if threads is None:
        raw = os.environ.get(THREADS_ENV)
        if raw:
            try:
                threads = int(raw)
            except ValueError:
                raise ConfigError(f"expected an integer, got {raw!r}", key=THREADS_ENV)
        else:
            threads = os.cpu_count() or 1
    if threads < 1:
        raise ConfigError(f"thread count must be positive, got {threads}", key="threads")
    return threads


def build_hypermodel(variant: Variant, eta: float, lam: float, d: int, structure, seed: int) -> Hypermodel:
    """
    Hypermodel with its group structure or tight frame.

    `structure` is any object with group_size, cov_kind, frame_kind and k attributes
    (a sweep spec or a config section). Structures are a deterministic function of `seed`.
    """
    variant = Variant(variant)
    if variant == Variant.GROUP:
        groups = equal_groups(d, structure.group_size, structure.cov_kind, seed)
        return Hypermodel(variant=variant, eta=eta, lam=lam, groups=groups)
    if variant == Variant.FRAME:
        frame = make_tight_frame(d, structure.frame_kind, seed, k=structure.k)
        return Hypermodel(variant=variant, eta=eta, lam=lam, frame=frame)
    return Hypermodel(variant=variant, eta=eta, lam=lam, d=d)


def corollary_lambda(hm: Hypermodel, n: int) -> float:
    p_max = hm.groups.p_max if hm.variant == Variant.GROUP else None
    return lambda_rule(hm.variant, n, hm.m, p_max=p_max)


def bound_kind(hm: Hypermodel, truth: TruthSpec) -> BoundKind:
    if hm.variant == Variant.GROUP:
        return BoundKind.GROUP
    if hm.variant == Variant.FRAME:
        return BoundKind.FRAME
    return BoundKind.LQ if truth.kind == TruthKind.LQ_BALL else BoundKind.HARD


def _truth_at(truth: TruthSpec, value: float) -> TruthSpec:
    if truth.kind == TruthKind.LQ_BALL:
        return truth.model_copy(update={"radius": float(value)})
    return truth.model_copy(update={"s": int(value)})


def _rate(trace: ConvergenceTrace) -> Optional[float]:
    try:
        rho, _ = linear_rate_estimate(trace)
    except ValidationError:
        return None
    return rho


def _certify(p: Problem, hm: Hypermodel, truth: TruthSpec, tau_sq_factor: float, samples: int,
             cone_samples: Optional[int], seed: int):
    """κ from sampled RSC, the model subspace of u★ and the explicit radius."""
    tau_sq = tau_sq_factor * np.log(hm.m) / p.n
    rsc = rsc_estimate(p.A, hm, tau_sq, n_samples=samples, seed=derive_seed(seed, 3), cone_samples=cone_samples)
    if truth.kind == TruthKind.LQ_BALL and rsc.kappa > 0:
        M = threshold_support(p.u_star, hm.lam / rsc.kappa, hm)
    else:
        M = exact_support(p.u_star, hm)
    radius = error_radius(p.u_star, M, hm, rsc.kappa, tau_sq, hm.lam,
                          lambda_min=lambda_threshold(p.A, p.eps, hm))
    return rsc, radius


def _trial_record(hm: Hypermodel, p: Problem, truth: TruthSpec, seed: int, u_hat: np.ndarray,
                  trace: ConvergenceTrace, wall_ms: float, **extra) -> TrialRecord:
    return TrialRecord(
        variant=hm.variant,
        n=p.n,
        d=p.d,
        k=hm.m if hm.variant != Variant.COORDINATE else None,
        s_or_Rq=truth.sparsity,
        q=truth.q,
        eta=hm.eta,
        lam=hm.lam,
        seed=seed,
        error_sq=float(np.sum((u_hat - p.u_star) ** 2)),
        iters=trace.iterations,
        rho_hat=_rate(trace),
        wall_time_ms=wall_ms,
        **extra,
    )


def run_trial(spec: SweepSpec, base: Hypermodel, n: int, s_or_Rq: float, eta: float, seed: int) -> TrialRecord:
    truth = _truth_at(spec.truth, s_or_Rq)
    lam = spec.lambda_value if spec.lambda_rule == LambdaRule.EXPLICIT else corollary_lambda(base, n)
    hm = base.model_copy(update={"eta": float(eta), "lam": float(lam)})
    p = make_problem(n, spec.d, spec.design, truth, hm, seed)

    start = time.perf_counter()
    u_hat, _, trace = solve(p, hm, spec.solver)
    wall_ms = (time.perf_counter() - start) * 1e3

    if spec.rsc_samples > 0:
        _, radius = _certify(p, hm, truth, RSC_TAU_SQ_FACTOR, spec.rsc_samples, None, seed)
        extra = {"bound_delta": radius.delta, "hypotheses_ok": radius.hypotheses_ok}
    else:
        extra = {"hypotheses_ok": bool(hm.lam >= lambda_threshold(p.A, p.eps, hm))}
    return _trial_record(hm, p, truth, seed, u_hat, trace, wall_ms, **extra)


def cell_grid(spec: SweepSpec) -> List[Tuple[int, float, float]]:
    """(n, s_or_Rq, η) for every cell, in report order."""
    return [(n, s, eta) for eta in spec.etas for s in spec.sparsity_values for n in spec.n_grid]


def run_cell(spec: SweepSpec, base: Hypermodel, n: int, s_or_Rq: float, eta: float) -> CellReport:
    """
    All trials of one cell. Trial t uses derive_seed(master, 1, n, s-index, t), so the same
    problems are reused across η. Failed trials are recorded and skipped.
    """
    s_index = spec.sparsity_values.index(s_or_Rq)
    trials, failures = [], []
    for t in range(spec.trials):
        seed = derive_seed(spec.master_seed, 1, n, s_index, t)
        try:
            trials.append(run_trial(spec, base, n, s_or_Rq, eta, seed))
        except (HierMapError, ValueError, np.linalg.LinAlgError) as e:
            logger.warning("cell n=%d s=%g eta=%g: trial %d failed: %s", n, s_or_Rq, eta, t, e)
            failures.append(f"trial {t} (seed {seed}): {e}")

    cell = CellReport(n=n, eta=eta, s_or_Rq=s_or_Rq, trials=trials, failures=failures)
    if trials:
        errors = np.array([r.error_sq for r in trials])
        cell.median_error_sq = float(np.median(errors))
        cell.q25, cell.q75 = (float(v) for v in np.percentile(errors, [25, 75]))
        truth = _truth_at(spec.truth, s_or_Rq)
        hm = base.model_copy(update={"eta": float(eta)})
        params = RhsParams(
            lam=trials[0].lam, kappa=1.0, eta=eta, m=hm.m, n=n,
            s=None if truth.kind == TruthKind.LQ_BALL else truth.s,
            q=truth.q, radius=truth.radius,
            p_max=hm.groups.p_max if hm.groups is not None else None,
        )
        cell.theory = corollary_rate(bound_kind(hm, truth), params)
    logger.debug("cell n=%d s=%g eta=%g: %d trials, median error %.4g",
                 n, s_or_Rq, eta, len(trials), cell.median_error_sq or float("nan"))
    return cell


def fit_slope(ns: Sequence[float], values: Sequence[float], eta: Optional[float] = None,
              s_or_Rq: Optional[float] = None) -> Optional[SlopeFit]:
    """Least-squares slope of log(value) against log(n) with a t-based confidence interval."""
    ns = np.asarray(ns, dtype=float)
    values = np.asarray(values, dtype=float)
    keep = values > 0
    if keep.sum() < MIN_FIT_POINTS:
        logger.warning("slope fit needs %d grid points, got %d", MIN_FIT_POINTS, int(keep.sum()))
        return None
    fit = stats.linregress(np.log(ns[keep]), np.log(values[keep]))
    half = stats.t.ppf(0.5 + FIT_CONFIDENCE / 2.0, keep.sum() - 2) * fit.stderr
    return SlopeFit(slope=float(fit.slope), ci_low=float(fit.slope - half), ci_high=float(fit.slope + half),
                    intercept=float(fit.intercept), points=int(keep.sum()), eta=eta, s_or_Rq=s_or_Rq)


def assemble_report(spec: SweepSpec, cells: List[CellReport]) -> ExperimentReport:
    """One slope fit per (η, s_or_Rq) series; `fits` is the first series'."""
    series_fits = []
    for eta in spec.etas:
        for s in spec.sparsity_values:
            series = [c for c in cells if c.eta == eta and c.s_or_Rq == s and c.median_error_sq is not None]
            fit = fit_slope([c.n for c in series], [c.median_error_sq for c in series], eta=eta, s_or_Rq=s)
            if fit is not None:
                series_fits.append(fit)
    report = ExperimentReport(
        spec=spec.model_dump(mode="json", by_alias=True),
        cells=cells,
        fits=series_fits[0] if series_fits else None,
        series_fits=series_fits,
    )
    if report.fits is not None:
        logger.info("sweep slope %.3f [%.3f, %.3f]", report.fits.slope, report.fits.ci_low, report.fits.ci_high)
    return report


def sweep_base(spec: SweepSpec) -> Hypermodel:
    """Hypermodel template shared by every cell; λ and η are set per trial."""
    return build_hypermodel(spec.variant, spec.etas[0], 1.0, spec.d, spec, derive_seed(spec.master_seed, 0))


class SolveOutcome(HierBaseModel):
    report: SolveReport
    u_hat: Vector
    theta_hat: Vector
    trace: ConvergenceTrace
    problem: Problem


def run_solve(cfg: RunConfig) -> SolveOutcome:
    seed = cfg.problem.seed
    model = cfg.model
    p = load_problem(cfg.problem.data) if cfg.problem.data is not None else None
    d = p.d if p is not None else cfg.problem.d
    n = p.n if p is not None else cfg.problem.n
    hm = build_hypermodel(model.variant, model.eta, 1.0, d, model, derive_seed(seed, 4))
    lam = model.lam if model.lam is not None else corollary_lambda(hm, n)
    hm = hm.model_copy(update={"lam": float(lam)})
    if p is None:
        p = make_problem(n, d, cfg.problem.design, cfg.truth, hm, seed, normalize_design=cfg.problem.normalize)

    start = time.perf_counter()
    u_hat, theta_hat, trace = solve(p, hm, cfg.solver)
    wall_ms = (time.perf_counter() - start) * 1e3
    last = trace.records[-1]
    report = SolveReport(
        variant=hm.variant, n=p.n, d=p.d, eta=hm.eta, lam=hm.lam, seed=seed,
        converged=trace.converged, iterations=trace.iterations,
        J=last.J, F=last.F, grad_inf_norm=last.grad_inf_norm,
        rho_hat=_rate(trace),
        error_sq=None if p.u_star is None else float(np.sum((u_hat - p.u_star) ** 2)),
        lambda_threshold=None if p.eps is None else lambda_threshold(p.A, p.eps, hm),
        column_normalized=p.column_normalized,
        block_normalized=p.block_normalized,
        frame_normalized=p.frame_normalized,
        wall_time_ms=wall_ms,
    )
    return SolveOutcome(report=report, u_hat=u_hat, theta_hat=theta_hat.theta, trace=trace, problem=p)


def run_rates_trial(cfg: RatesConfig, base: Hypermodel, t: int) -> Tuple[TrialRecord, float]:
    """One certified-bound trial; returns the record and the RSC curvature κ."""
    seed = derive_seed(cfg.master_seed, 2, t)
    lam = cfg.lam if cfg.lam is not None else cfg.lambda_scale * corollary_lambda(base, cfg.n)
    hm = base.model_copy(update={"lam": float(lam)})
    p = make_problem(cfg.n, cfg.d, cfg.design, cfg.truth, hm, seed)

    start = time.perf_counter()
    u_hat, _, trace = solve(p, hm, cfg.solver)
    wall_ms = (time.perf_counter() - start) * 1e3
    rsc, radius = _certify(p, hm, cfg.truth, cfg.tau_sq_factor, cfg.rsc_samples, cfg.cone_samples, seed)
    record = _trial_record(hm, p, cfg.truth, seed, u_hat, trace, wall_ms,
                           bound_delta=radius.delta, hypotheses_ok=radius.hypotheses_ok)
    return record, rsc.kappa


def rates_base(cfg: RatesConfig) -> Hypermodel:
    return build_hypermodel(cfg.variant, cfg.eta, 1.0, cfg.d, cfg, derive_seed(cfg.master_seed, 0))


def summarize_rates(results: List[Tuple[TrialRecord, float]]) -> RatesReport:
    trials = [record for record, _ in results]
    certified = [r for r in trials if r.hypotheses_ok]
    violations = [r for r in certified if r.error_sq > r.bound_delta]
    for r in violations:
        logger.warning("trial seed %d: error %.4g exceeds certified radius %.4g", r.seed, r.error_sq, r.bound_delta)
    if not certified:
        logger.warning("no trial satisfied the RSC and lambda hypotheses; nothing was certified")
    report = RatesReport(
        trials=trials,
        hypothesis_fraction=len(certified) / len(trials) if trials else 0.0,
        violations=len(violations),
        kappas=[kappa for _, kappa in results],
    )
    logger.info("rates: %d/%d trials certified, %d violations", len(certified), len(trials), report.violations)
    return report


def _output_dir(*candidates: Optional[PathLike]) -> Optional[Path]:
    for candidate in candidates:
        if candidate is not None:
            path = Path(candidate)
            path.mkdir(parents=True, exist_ok=True)
            return path
    return None


def write_solve_outputs(out: Path, outcome: SolveOutcome, cfg: RunConfig) -> None:
    write_vector(out / "u_hat.csv", outcome.u_hat)
    write_vector(out / "theta_hat.csv", outcome.theta_hat)
    write_trace_csv(out / "trace.csv", outcome.trace)
    write_report(out / "report.json", outcome.report)
    if cfg.problem.data is None:
        save_problem(out / "problem", outcome.problem, seed=cfg.problem.seed,
                     spec=cfg.model_dump(mode="json", by_alias=True))


def write_sweep_outputs(out: Path, report: ExperimentReport) -> None:
    write_report(out / "report.json", report)
    write_trials_csv(out / "trials.csv", [t for cell in report.cells for t in cell.trials])
    write_plot_csv(out / "plot.csv", report.cells)


def write_rates_outputs(out: Path, report: RatesReport) -> None:
    write_report(out / "rates.json", report)
    write_trials_csv(out / "trials.csv", report.trials)


# ==========================================
# Synchronous Bench Implementation
# ==========================================

class BaseSubRunner:
    def __init__(self, bench: "Bench"):
        self._bench = bench


class SolveRunner(BaseSubRunner):
    """Single solves from a run configuration."""

    def run(self, cfg: RunConfig, out_dir: Optional[PathLike] = None) -> SolveOutcome:
        """
        Solve one problem and write u_hat.csv, theta_hat.csv, trace.csv and report.json.

        :param out_dir: Overrides the bench's and the config's output directory.
        """
        outcome = run_solve(cfg)
        out = _output_dir(out_dir, self._bench.out_dir, cfg.output.dir)
        write_solve_outputs(out, outcome, cfg)
        return outcome


class CheckRunner(BaseSubRunner):
    """Property suites."""

    def run(self, suite: str, cases: Optional[int] = None, seed: int = 0) -> SuiteResult:
        return run_suite(suite, cases, seed)

    def run_all(self, cases: Optional[int] = None, seed: int = 0) -> List[SuiteResult]:
        return self._bench._map(run_suite, [(name, cases, seed) for name in suite_names()])


class SweepRunner(BaseSubRunner):
    """Rate-scaling sweeps; cells run concurrently on the bench's pool."""

    def run(self, spec: SweepSpec, out_dir: Optional[PathLike] = None) -> ExperimentReport:
        base = sweep_base(spec)
        cells = self._bench._map(run_cell, [(spec, base, *cell) for cell in cell_grid(spec)])
        report = assemble_report(spec, cells)
        out = _output_dir(out_dir, self._bench.out_dir)
        if out is not None:
            write_sweep_outputs(out, report)
        return report


class RatesRunner(BaseSubRunner):
    """Certified-bound trials."""

    def run(self, cfg: RatesConfig, out_dir: Optional[PathLike] = None) -> RatesReport:
        base = rates_base(cfg)
        results = self._bench._map(run_rates_trial, [(cfg, base, t) for t in range(cfg.trials)])
        report = summarize_rates(results)
        out = _output_dir(out_dir, self._bench.out_dir)
        if out is not None:
            write_rates_outputs(out, report)
        return report


class Bench:
    """
    Main entry point for solves, checks and sweeps (Synchronous).

    Usage:
        with Bench(threads=4) as bench:
            report = bench.sweeps.run(spec)
            result = bench.checks.run("sandwich")
    """

    def __init__(self, threads: Optional[int] = None, out_dir: Optional[PathLike] = None):
        self.threads = resolve_threads(threads)
        self.out_dir = None if out_dir is None else Path(out_dir)
        self._executor = ThreadPoolExecutor(max_workers=self.threads)

        self.solves = SolveRunner(self)
        self.checks = CheckRunner(self)
        self.sweeps = SweepRunner(self)
        self.rates = RatesRunner(self)

    def close(self):
        """Wait for running jobs and release the worker threads."""
        self._executor.shutdown(wait=True)

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        self.close()

    def _map(self, fn: Callable, jobs: List[tuple]) -> list:
        """Run fn(*job) for every job on the pool; results keep job order."""
        futures = [self._executor.submit(fn, *job) for job in jobs]
        return [future.result() for future in futures]


# ==========================================
# Asynchronous Bench Implementation
# ==========================================

class BaseAsyncSubRunner:
    def __init__(self, bench: "AsyncBench"):
        self._bench = bench


class AsyncSolveRunner(BaseAsyncSubRunner):
    async def run(self, cfg: RunConfig, out_dir: Optional[PathLike] = None) -> SolveOutcome:
        outcome = await self._bench._run(run_solve, cfg)
        out = _output_dir(out_dir, self._bench.out_dir, cfg.output.dir)
        write_solve_outputs(out, outcome, cfg)
        return outcome


class AsyncCheckRunner(BaseAsyncSubRunner):
    async def run(self, suite: str, cases: Optional[int] = None, seed: int = 0) -> SuiteResult:
        return await self._bench._run(run_suite, suite, cases, seed)

    async def run_all(self, cases: Optional[int] = None, seed: int = 0) -> List[SuiteResult]:
        return await self._bench._gather(run_suite, [(name, cases, seed) for name in suite_names()])


class AsyncSweepRunner(BaseAsyncSubRunner):
    async def run(self, spec: SweepSpec, out_dir: Optional[PathLike] = None) -> ExperimentReport:
        base = sweep_base(spec)
        cells = await self._bench._gather(run_cell, [(spec, base, *cell) for cell in cell_grid(spec)])
        report = assemble_report(spec, cells)
        out = _output_dir(out_dir, self._bench.out_dir)
        if out is not None:
            write_sweep_outputs(out, report)
        return report


class AsyncRatesRunner(BaseAsyncSubRunner):
    async def run(self, cfg: RatesConfig, out_dir: Optional[PathLike] = None) -> RatesReport:
        base = rates_base(cfg)
        results = await self._bench._gather(run_rates_trial, [(cfg, base, t) for t in range(cfg.trials)])
        report = summarize_rates(results)
        out = _output_dir(out_dir, self._bench.out_dir)
        if out is not None:
            write_rates_outputs(out, report)
        return report


class AsyncBench:
    """
    Main entry point for solves, checks and sweeps (Asynchronous).

    Usage:
        async with AsyncBench(threads=4) as bench:
            report = await bench.sweeps.run(spec)
    """

    def __init__(self, threads: Optional[int] = None, out_dir: Optional[PathLike] = None):
        self.threads = resolve_threads(threads)
        self.out_dir = None if out_dir is None else Path(out_dir)
        self._semaphore: Optional[asyncio.Semaphore] = None

        self.solves = AsyncSolveRunner(self)
        self.checks = AsyncCheckRunner(self)
        self.sweeps = AsyncSweepRunner(self)
        self.rates = AsyncRatesRunner(self)

    async def close(self):
        self._semaphore = None

    async def __aenter__(self):
        return self

    async def __aexit__(self, exc_type, exc_val, exc_tb):
        await self.close()

    async def _run(self, fn: Callable, *args):
        if self._semaphore is None:
            self._semaphore = asyncio.Semaphore(self.threads)
        async with self._semaphore:
            return await asyncio.to_thread(fn, *args)

    async def _gather(self, fn: Callable, jobs: List[tuple]) -> list:
        return list(await asyncio.gather(*(self._run(fn, *job) for job in jobs)))
