import logging
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg
from scipy.sparse.linalg import LinearOperator, cg

from .constants import TRACE_ERROR_COLUMN
from .exceptions import DimensionError, NotConvergedError, SolverError, ValidationError
from .hypermodel import (
    SQRT2,
    gradient_F,
    local_radii,
    objective_F,
    objective_J,
    theta_closed_form,
)
from .models import (
    ConvergenceTrace,
    Hypermodel,
    IterationRecord,
    LinearSolver,
    Problem,
    SolverConfig,
    ThetaInit,
    ThetaVector,
    Variant,
)

logger = logging.getLogger(__name__)


class NormalSystem:
    """Gram matrix AᵀA/n and right-hand side Aᵀy/n of a problem, computed once per solve."""

    def __init__(self, p: Problem):
        self.problem = p
        self.gram = p.A.T @ p.A / p.n
        self.rhs = p.A.T @ p.y / p.n

    def apply_gram(self, v: np.ndarray) -> np.ndarray:
        return self.problem.A.T @ (self.problem.A @ v) / self.problem.n


def _theta_values(theta, m: int) -> np.ndarray:
    values = theta.theta if isinstance(theta, ThetaVector) else np.asarray(theta, dtype=float)
    if values.shape != (m,):
        raise DimensionError(f"theta has length {values.shape[0]}, expected {m}", m, values.shape[0])
    if not np.all(values > 0):
        raise ValidationError("theta entries must be positive")
    return values


def _scaling(theta: np.ndarray, hm: Hypermodel, d: int) -> np.ndarray:
    """
    S with S Sᵀ = D_θ (coordinate: diag √θ as a vector; group: block √θ_j L_j).

    Solving in w = S⁻¹u turns the u-update into (SᵀGS + λ'I)w = Sᵀb, whose
    condition number stays bounded as entries of θ approach η.
    """
    if hm.variant == Variant.COORDINATE:
        return np.sqrt(theta)
    structure = hm.groups
    S = np.zeros((d, d))
    for j, idx in enumerate(structure.index_arrays):
        S[np.ix_(idx, idx)] = np.sqrt(theta[j]) * structure.cholesky_factors[j]
    return S


def _group_unscale(u: np.ndarray, theta: np.ndarray, hm: Hypermodel) -> np.ndarray:
    """w = S⁻¹u, one block at a time; groups need not be contiguous or ascending."""
    structure = hm.groups
    w = np.empty_like(u)
    for j, idx in enumerate(structure.index_arrays):
        L = structure.cholesky_factors[j]
        w[idx] = linalg.solve_triangular(L, u[idx], lower=True) / np.sqrt(theta[j])
    return w


def _cho_solve(M: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    try:
        return linalg.cho_solve(linalg.cho_factor(M, lower=True), rhs)
    except linalg.LinAlgError as e:
        raise SolverError(f"u-update system is not positive definite: {e}")


def _run_cg(matvec, rhs: np.ndarray, x0: np.ndarray, cfg: SolverConfig) -> np.ndarray:
    n = rhs.shape[0]
    op = LinearOperator((n, n), matvec=matvec, dtype=float)
    x, info = cg(op, rhs, x0=x0, rtol=cfg.cg_tol, atol=0.0, maxiter=cfg.cg_max_iters)
    if info > 0:
        logger.warning("conjugate gradient stopped after %d iterations without reaching %.1e", info, cfg.cg_tol)
    elif info < 0:
        raise SolverError("conjugate gradient breakdown", iterations=cfg.cg_max_iters)
    return x


def _u_step(theta: np.ndarray, system: NormalSystem, hm: Hypermodel, cfg: SolverConfig,
            u0: Optional[np.ndarray] = None) -> np.ndarray:
    d = system.rhs.shape[0]
    lam = hm.lam / SQRT2
    use_cg = cfg.linear_solver == LinearSolver.CONJUGATE_GRADIENT

    if hm.variant == Variant.FRAME:
        W = hm.frame.W
        if use_cg:
            x0 = np.zeros(d) if u0 is None else u0
            return _run_cg(lambda v: system.apply_gram(v) + lam * (W @ ((W.T @ v) / theta)), system.rhs, x0, cfg)
        # d×d system; k may be much larger than d.
        M = system.gram + lam * (W / theta) @ W.T
        return _cho_solve(M, system.rhs)

    S = _scaling(theta, hm, d)
    if hm.variant == Variant.COORDINATE:
        rhs = S * system.rhs
        if use_cg:
            x0 = np.zeros(d) if u0 is None else u0 / S
            w = _run_cg(lambda v: S * system.apply_gram(S * v) + lam * v, rhs, x0, cfg)
        else:
            M = S[:, None] * system.gram * S[None, :]
            M[np.diag_indices(d)] += lam
            w = _cho_solve(M, rhs)
        return S * w

    rhs = S.T @ system.rhs
    if use_cg:
        x0 = np.zeros(d) if u0 is None else _group_unscale(u0, theta, hm)
        w = _run_cg(lambda v: S.T @ system.apply_gram(S @ v) + lam * v, rhs, x0, cfg)
    else:
        M = S.T @ system.gram @ S
        M[np.diag_indices(d)] += lam
        w = _cho_solve(M, rhs)
    return S @ w


def _check_dims(p: Problem, hm: Hypermodel) -> None:
    if hm.d is not None and hm.d != p.d:
        raise DimensionError(f"hypermodel has d={hm.d}, problem has d={p.d}", hm.d, p.d)


def _index_count(p: Problem, hm: Hypermodel) -> int:
    return hm.m if hm.m is not None else p.d


def u_update(theta, p: Problem, hm: Hypermodel, cfg: Optional[SolverConfig] = None) -> np.ndarray:
    """
    Exact minimizer of u ↦ J(u, θ).

    Solves (AᵀA/n + (λ/√2) M_θ) u = Aᵀy/n with M_θ = D_θ⁻¹, blockdiag(C_j⁻¹/θ_j) or W D_θ⁻¹ Wᵀ.
    """
    cfg = cfg or SolverConfig()
    _check_dims(p, hm)
    values = _theta_values(theta, _index_count(p, hm))
    return _u_step(values, NormalSystem(p), hm, cfg)


def normal_residual(u, theta, p: Problem, hm: Hypermodel) -> float:
    """Relative residual ‖(G + λ'M_θ)u − b‖ / ‖b‖ of the u-update system."""
    u = np.asarray(u, dtype=float)
    values = _theta_values(theta, _index_count(p, hm))
    system = NormalSystem(p)
    lam = hm.lam / SQRT2
    if hm.variant == Variant.COORDINATE:
        penalty = u / values
    elif hm.variant == Variant.FRAME:
        W = hm.frame.W
        penalty = W @ ((W.T @ u) / values)
    else:
        penalty = np.empty_like(u)
        for j, idx in enumerate(hm.groups.index_arrays):
            penalty[idx] = hm.groups.inverses[j] @ u[idx] / values[j]
    residual = system.gram @ u + lam * penalty - system.rhs
    scale = max(np.linalg.norm(system.rhs), np.finfo(float).tiny)
    return float(np.linalg.norm(residual) / scale)


def mahalanobis_norm(v, theta, hm: Hypermodel) -> float:
    """
    √(Σ_j r_j(v)²/θ_j): √(vᵀD_θ⁻¹v), its block analogue, or √(vᵀ W D_θ⁻¹ Wᵀ v).
    """
    radii = local_radii(v, hm)
    values = _theta_values(theta, radii.shape[-1])
    return float(np.sqrt(np.sum(radii ** 2 / values)))


def _initial_theta(m: int, hm: Hypermodel, cfg: SolverConfig) -> np.ndarray:
    if cfg.theta_init == ThetaInit.ETA_FLOOR:
        return np.full(m, hm.eta)
    return np.ones(m)


def solve(p: Problem, hm: Hypermodel, cfg: Optional[SolverConfig] = None,
          theta0=None) -> Tuple[np.ndarray, ThetaVector, ConvergenceTrace]:
    """
    Alternating minimization of J: exact u-update, then closed-form θ-update.

    Stops when ‖u^ℓ − u^{ℓ−1}‖ <= tol_u·‖u^ℓ‖ and ‖∇F(u^ℓ)‖∞ <= tol_grad, or after
    max_iters iterations. Hitting the cap is logged, and raised only when cfg.strict.

    :return: (û, θ̂, trace) with θ̂ = f_map(û).
    """
    cfg = cfg or SolverConfig()
    _check_dims(p, hm)
    m = _index_count(p, hm)
    theta = _initial_theta(m, hm, cfg) if theta0 is None else _theta_values(theta0, m).copy()
    system = NormalSystem(p)
    u = np.zeros(p.d)
    trace = ConvergenceTrace(hypermodel=hm)
    tiny = np.finfo(float).tiny

    for iteration in range(1, cfg.max_iters + 1):
        u_new = _u_step(theta, system, hm, cfg, u0=u)
        theta = theta_closed_form(local_radii(u_new, hm), hm.eta)
        step = float(np.linalg.norm(u_new - u))
        u = u_new
        grad_inf = float(np.abs(gradient_F(u, p, hm)).max())
        record = IterationRecord(
            iteration=iteration,
            J=objective_J(u, theta, p, hm),
            F=objective_F(u, p, hm),
            step_norm=step,
            grad_inf_norm=grad_inf,
        )
        trace.records.append(record)
        trace.iterates.append(u.copy())
        logger.debug("iter %d: J=%.12e step=%.3e grad=%.3e", iteration, record.J, step, grad_inf)
        if step <= cfg.tol_u * max(float(np.linalg.norm(u)), tiny) and grad_inf <= cfg.tol_grad:
            trace.converged = True
            break

    trace.u_hat = u
    trace.theta_hat = theta
    if trace.converged:
        logger.info("solve converged in %d iterations (grad %.2e)", trace.iterations, trace.records[-1].grad_inf_norm)
    else:
        logger.warning("solve stopped at max_iters=%d (step %.2e, grad %.2e)",
                       cfg.max_iters, trace.records[-1].step_norm, trace.records[-1].grad_inf_norm)
        if cfg.strict:
            raise NotConvergedError("solve did not converge", iterations=cfg.max_iters,
                                    residual=trace.records[-1].grad_inf_norm)
    return u, ThetaVector(theta=theta, eta=hm.eta), trace


def solve_path(p: Problem, hm: Hypermodel, etas: Sequence[float],
               cfg: Optional[SolverConfig] = None) -> List[Tuple[np.ndarray, ThetaVector, ConvergenceTrace]]:
    """Solve for each η in turn, warm-starting θ from the previous solution."""
    results = []
    u_prev = None
    for eta in etas:
        current = hm.model_copy(update={"eta": float(eta)})
        theta0 = None if u_prev is None else theta_closed_form(local_radii(u_prev, current), current.eta)
        result = solve(p, current, cfg, theta0=theta0)
        u_prev = result[0]
        results.append(result)
    return results


def linear_rate_estimate(trace: ConvergenceTrace) -> Tuple[float, List[float]]:
    """
    Median tail ratio of Mahalanobis errors e^ℓ = ‖u^ℓ − û‖_{D_θ̂}.

    Errors are measured against the final iterate, so iterates closer to û than
    max(1e-12, 1e3·e^{L−2}) carry the final step's own error and are excluded.
    Ratios come from the last half of the remaining iterates. Fills each record's
    mahalanobis_error.
    """
    if len(trace.iterates) < 10 or trace.u_hat is None or trace.theta_hat is None:
        raise ValidationError(f"linear_rate_estimate needs at least 10 iterates, got {len(trace.iterates)}")
    hm = trace.hypermodel
    errors = np.array([mahalanobis_norm(u - trace.u_hat, trace.theta_hat, hm) for u in trace.iterates])
    for record, error in zip(trace.records, errors):
        record.mahalanobis_error = float(error)

    floor = max(1e-12, 1e3 * errors[-2])
    eligible = errors[:-1]
    below = np.nonzero(eligible < floor)[0]
    if below.size:
        eligible = eligible[:below[0]]
    if eligible.size < 2:
        return 0.0, []
    tail = eligible[eligible.size // 2:] if eligible.size >= 4 else eligible
    ratios = [float(b / a) for a, b in zip(tail[:-1], tail[1:])]
    if not ratios:
        return 0.0, []
    return float(np.median(ratios)), ratios


def trace_to_rows(trace: ConvergenceTrace) -> List[dict]:
    rows = []
    for record in trace.records:
        row = {
            "iter": record.iteration,
            "J": record.J,
            "F": record.F,
            "step_norm": record.step_norm,
            "grad_inf_norm": record.grad_inf_norm,
        }
        if record.mahalanobis_error is not None:
            row[TRACE_ERROR_COLUMN] = record.mahalanobis_error
        rows.append(row)
    return rows
