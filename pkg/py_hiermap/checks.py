import logging
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from .exceptions import ValidationError
from .frames import frame_defect, make_groups, make_tight_frame
from .hypermodel import (
    decomposable_norm,
    dual_norm,
    f_map,
    local_radii,
    objective_J,
    regularizer_eta,
    regularizer_grad,
    sandwich_bounds,
    subgradient,
)
from .models import FrameKind, Hypermodel, Problem, SolverConfig, SuiteResult, TruthKind, TruthSpec, Variant
from .oracle import finite_diff_grad, golden_section_theta
from .solver import solve
from .synth import derive_seed, exact_support, make_problem
from .theory import cone_check, lambda_rule, lambda_threshold

logger = logging.getLogger(__name__)

SANDWICH_ETAS = (0.4, 0.1, 0.01)
VARIANTS = (Variant.COORDINATE, Variant.GROUP, Variant.FRAME)

# A case returns None on success, or the inputs that reproduce its failure.
CaseFn = Callable[[int, int, "Structures"], Optional[dict]]


class Structures:
    """Group structure and frame shared by the cases of one suite run."""

    def __init__(self, seed: int):
        self.groups = make_groups(6, [2, 1, 3], "random", derive_seed(seed, 0))
        self.frame = make_tight_frame(4, FrameKind.RANDOM_ROWS, derive_seed(seed, 1), k=9)

    def hypermodel(self, variant: Variant, eta: float, lam: float = 1.0) -> Hypermodel:
        if variant == Variant.GROUP:
            return Hypermodel(variant=variant, eta=eta, lam=lam, groups=self.groups)
        if variant == Variant.FRAME:
            return Hypermodel(variant=variant, eta=eta, lam=lam, frame=self.frame)
        return Hypermodel(variant=variant, eta=eta, lam=lam, d=5)


def _log_uniform(rng: np.random.Generator, lo: float, hi: float) -> float:
    return float(np.exp(rng.uniform(np.log(lo), np.log(hi))))


def _random_u(rng: np.random.Generator, d: int) -> np.ndarray:
    u = 10.0 ** rng.uniform(-3.0, 1.5) * rng.standard_normal(d)
    # exact zeros exercise the f_j = η branch
    u[rng.random(d) < 0.2] = 0.0
    return u


def _sandwich_case(i: int, seed: int, env: Structures) -> Optional[dict]:
    rng = np.random.default_rng(seed)
    variant = VARIANTS[i % 3]
    eta = SANDWICH_ETAS[(i // 3) % 3]
    hm = env.hypermodel(variant, eta)
    u = _random_u(rng, hm.d)
    value = float(regularizer_eta(u, hm))
    lower, upper = sandwich_bounds(u, hm)
    slack = 1e-12 * max(1.0, abs(value))
    zero = np.zeros(hm.d)
    at_zero = abs(float(regularizer_eta(zero, hm)) - float(sandwich_bounds(zero, hm)[1]))
    if lower - slack <= value <= upper + slack and at_zero <= 1e-12:
        return None
    return {"variant": variant.value, "eta": eta, "u": u.tolist(), "value": value,
            "lower": float(lower), "upper": float(upper), "gap_at_zero": at_zero}


def _duality_case(i: int, seed: int, env: Structures) -> Optional[dict]:
    rng = np.random.default_rng(seed)
    variant = VARIANTS[i % 3]
    hm = env.hypermodel(variant, 0.1)
    u = _random_u(rng, hm.d)
    v = 10.0 ** rng.uniform(-2.0, 2.0) * rng.standard_normal(hm.d)
    inner = abs(float(u @ v))
    bound = float(decomposable_norm(u, hm) * dual_norm(v, hm))
    ok = inner <= bound * (1.0 + 1e-12) + 1e-300
    if ok and variant != Variant.FRAME and np.any(u != 0):
        s = subgradient(u, hm)
        norm = float(decomposable_norm(u, hm))
        ok = abs(float(u @ s) - norm) <= 1e-10 * norm and abs(float(dual_norm(s, hm)) - 1.0) <= 1e-10
    if ok:
        return None
    return {"variant": variant.value, "u": u.tolist(), "v": v.tolist(), "inner": inner, "bound": bound}


def _theta_case(i: int, seed: int, env: Structures) -> Optional[dict]:
    rng = np.random.default_rng(seed)
    variant = VARIANTS[i % 3]
    eta = _log_uniform(rng, 1e-3, 0.49)
    hm = env.hypermodel(variant, eta)
    u = _random_u(rng, hm.d)
    radii = local_radii(u, hm)
    closed = f_map(u, hm).theta
    j = int(rng.integers(radii.shape[0]))
    brute = golden_section_theta(float(radii[j]), eta)
    if abs(closed[j] - brute) <= 1e-6 * max(1.0, closed[j]):
        return None
    return {"variant": variant.value, "eta": eta, "u": u.tolist(), "index": j,
            "closed_form": float(closed[j]), "golden": brute}


def _gradient_case(i: int, seed: int, env: Structures) -> Optional[dict]:
    rng = np.random.default_rng(seed)
    variant = VARIANTS[i % 3]
    eta = _log_uniform(rng, 1e-3, 0.49)
    hm = env.hypermodel(variant, eta)
    u = rng.uniform(-10.0, 10.0, size=hm.d)
    analytic = regularizer_grad(u, hm)
    numeric = finite_diff_grad(lambda x: float(regularizer_eta(x, hm)), u)
    error = float(np.abs(analytic - numeric).max())
    if error <= 1e-5:
        return None
    return {"variant": variant.value, "eta": eta, "u": u.tolist(), "max_error": error}


def _convexity_case(i: int, seed: int, env: Structures) -> Optional[dict]:
    rng = np.random.default_rng(seed)
    variant = VARIANTS[i % 3]
    hm = env.hypermodel(variant, _log_uniform(rng, 1e-3, 0.49), lam=_log_uniform(rng, 0.01, 10.0))
    A = rng.standard_normal((7, hm.d))
    p = Problem(A=A, y=rng.standard_normal(7))
    u1, u2 = _random_u(rng, hm.d), _random_u(rng, hm.d)
    t1, t2 = np.exp(rng.normal(0.0, 2.0, hm.m)), np.exp(rng.normal(0.0, 2.0, hm.m))
    mid = objective_J((u1 + u2) / 2.0, (t1 + t2) / 2.0, p, hm)
    avg = 0.5 * (objective_J(u1, t1, p, hm) + objective_J(u2, t2, p, hm))
    if mid <= avg + 1e-12 * (abs(avg) + 1.0):
        return None
    return {"variant": variant.value, "u1": u1.tolist(), "u2": u2.tolist(),
            "theta1": t1.tolist(), "theta2": t2.tolist(), "midpoint": mid, "average": avg}


def _cone_case(i: int, seed: int, env: Structures) -> Optional[dict]:
    """End-to-end trial: λ = max(rule, threshold) puts û − u★ in the cone."""
    eta = 1e-3
    if i % 2 == 0:
        n, d = 128, 64
        hm = Hypermodel(variant=Variant.COORDINATE, eta=eta, lam=1.0, d=d)
        truth = TruthSpec(kind=TruthKind.HARD_SPARSE, s=4, amplitude=1.0)
        rule = lambda_rule(Variant.COORDINATE, n, d)
    else:
        n, d = 128, 64
        hm = Hypermodel(variant=Variant.GROUP, eta=eta, lam=1.0, groups=make_groups(d, [4] * 16, "identity", 0))
        truth = TruthSpec(kind=TruthKind.GROUP_SPARSE, s=2, amplitude=1.0)
        rule = lambda_rule(Variant.GROUP, n, 16, p_max=4)
    p = make_problem(n, d, "identity", truth, hm, seed)
    lam = max(rule, lambda_threshold(p.A, p.eps, hm))
    hm = hm.model_copy(update={"lam": lam})
    u_hat, _, _ = solve(p, hm, SolverConfig())
    M = exact_support(p.u_star, hm)
    member, slack = cone_check(u_hat - p.u_star, p.u_star, M, hm)
    if member:
        return None
    return {"variant": hm.variant.value, "trial_seed": seed, "lambda": lam, "slack": slack}


def _frame_case(i: int, seed: int, env: Structures) -> Optional[dict]:
    rng = np.random.default_rng(seed)
    d = 2 + i % 7
    if i % 3 == 0:
        frame = make_tight_frame(d, FrameKind.IDENTITY_PLUS_ORTHOBASIS, seed)
    else:
        frame = make_tight_frame(d, FrameKind.RANDOM_ROWS, seed, k=d + (i % 5) * d)
    tight, projector = frame_defect(frame.W)
    ok = tight <= 1e-10 and projector <= 1e-9
    # a square tight frame is orthogonal: the frame regularizer is the coordinate one after rotation
    square = make_tight_frame(d, FrameKind.RANDOM_ROWS, seed, k=d)
    u = _random_u(rng, d)
    eta = _log_uniform(rng, 1e-3, 0.49)
    frame_hm = Hypermodel(variant=Variant.FRAME, eta=eta, lam=1.0, frame=square)
    coord_hm = Hypermodel(variant=Variant.COORDINATE, eta=eta, lam=1.0, d=d)
    reduced = abs(float(regularizer_eta(u, frame_hm)) - float(regularizer_eta(square.W.T @ u, coord_hm)))
    ok = ok and reduced <= 1e-12 * max(1.0, float(regularizer_eta(u, frame_hm)))
    if ok:
        return None
    return {"d": d, "k": frame.k, "kind": frame.kind.value, "tight_defect": tight,
            "projector_defect": projector, "square_reduction_gap": reduced}


def _solver_case(i: int, seed: int, env: Structures) -> Optional[dict]:
    """Monotone descent, stationarity at termination and θ̂ = f_map(û)."""
    rng = np.random.default_rng(seed)
    variant = VARIANTS[i % 3]
    hm = env.hypermodel(variant, _log_uniform(rng, 1e-2, 0.4), lam=_log_uniform(rng, 0.05, 0.5))
    n = 3 * hm.d
    A = rng.standard_normal((n, hm.d))
    p = Problem(A=A, y=A @ _random_u(rng, hm.d) + 0.1 * rng.standard_normal(n))
    u_hat, theta_hat, trace = solve(p, hm, SolverConfig())
    J = np.array([r.J for r in trace.records])
    descent = bool(np.all(np.diff(J) <= 1e-12 * np.maximum(1.0, np.abs(J[1:]))))
    stationary = trace.converged and trace.records[-1].grad_inf_norm <= 1e-8
    consistent = np.allclose(theta_hat.theta, f_map(u_hat, hm).theta, rtol=1e-10, atol=0.0)
    if descent and stationary and consistent:
        return None
    return {"variant": variant.value, "descent": descent, "stationary": stationary,
            "theta_consistent": bool(consistent), "iterations": trace.iterations}


SUITES: Dict[str, Tuple[CaseFn, int]] = {
    "sandwich": (_sandwich_case, 1000),
    "duality": (_duality_case, 1000),
    "theta": (_theta_case, 10000),
    "gradient": (_gradient_case, 1000),
    "convexity": (_convexity_case, 1000),
    "cone": (_cone_case, 100),
    "frame": (_frame_case, 100),
    "solver": (_solver_case, 30),
}


def suite_names() -> List[str]:
    return list(SUITES)


def run_suite(suite: str, cases: Optional[int] = None, seed: int = 0) -> SuiteResult:
    """
    Run one property suite.

    Each case draws its inputs from derive_seed(seed, case). The first failing case's
    inputs and seed are returned as the reproducer.
    """
    if suite not in SUITES:
        raise ValidationError(f"unknown suite {suite!r}; choose from {', '.join(SUITES)}")
    case_fn, default_cases = SUITES[suite]
    cases = default_cases if cases is None else cases
    if cases < 1:
        raise ValidationError(f"cases must be positive, got {cases}")
    env = Structures(seed)
    failed = 0
    reproducer = None
    for i in range(cases):
        case_seed = derive_seed(seed, i + 1)
        failure = case_fn(i, case_seed, env)
        if failure is not None:
            failed += 1
            if reproducer is None:
                reproducer = {"suite": suite, "case": i, "seed": case_seed, "master_seed": seed, **failure}
                logger.warning("%s suite: case %d failed", suite, i)
    logger.info("%s suite: %d/%d passed", suite, cases - failed, cases)
    return SuiteResult(suite=suite, cases=cases, passed=cases - failed, failed=failed, reproducer=reproducer)
