"""
Reference implementations that validate the main code paths independently:
finite differences, brute-force minimization and proximal-gradient Lasso.
"""
import logging
from typing import Callable, Optional, Tuple

import numpy as np
from scipy import linalg, optimize

from .constants import FD_STEP, GRID_POINTS, GRID_RESOLUTION
from .exceptions import ValidationError
from .hypermodel import regularizer_eta
from .models import GroupStructure, Hypermodel, Problem, ProxConfig, StepRule, Variant

logger = logging.getLogger(__name__)


def finite_diff_grad(fn: Callable[[np.ndarray], float], u, h: float = FD_STEP) -> np.ndarray:
    """Central differences (fn(u + h e_i) − fn(u − h e_i)) / 2h per coordinate."""
    if h <= 0:
        raise ValidationError(f"step h must be positive, got {h}")
    u = np.asarray(u, dtype=float)
    grad = np.empty_like(u)
    for i in range(u.shape[0]):
        step = np.zeros_like(u)
        step[i] = h
        grad[i] = (fn(u + step) - fn(u - step)) / (2.0 * h)
    return grad


def _theta_penalty(theta, u_sq: float, eta: float):
    return u_sq / (2.0 * theta) + theta - eta * np.log(theta)


def golden_section_theta(u_val: float, eta: float) -> float:
    """
    Brute-force minimizer of θ ↦ u²/(2θ) + θ − η log θ over (1e-12, 10(|u| + η)).

    A logarithmic grid brackets the minimum; golden-section search refines it.
    """
    if eta <= 0:
        raise ValidationError(f"eta must be positive, got {eta}")
    u_sq = float(u_val) ** 2
    lo, hi = 1e-12, 10.0 * (abs(u_val) + eta)
    grid = np.geomspace(lo, hi, 400)
    values = _theta_penalty(grid, u_sq, eta)
    i = int(np.argmin(values))
    if 0 < i < grid.size - 1:
        result = optimize.minimize_scalar(
            _theta_penalty, bracket=(grid[i - 1], grid[i], grid[i + 1]),
            args=(u_sq, eta), method="golden", tol=1e-12,
        )
    else:
        bounds = (grid[max(i - 1, 0)], grid[min(i + 1, grid.size - 1)])
        result = optimize.minimize_scalar(
            _theta_penalty, bounds=bounds, args=(u_sq, eta), method="bounded",
            options={"xatol": 1e-14},
        )
    return float(result.x)


def _default_box(p: Problem) -> Tuple[float, float]:
    if p.u_star is not None:
        radius = 3.0 * float(np.abs(p.u_star).max()) + 1.0
    else:
        least_squares = linalg.lstsq(p.A, p.y)[0]
        radius = 3.0 * float(np.abs(least_squares).max()) + 1.0
    return -radius, radius


def _batch_F(points: np.ndarray, p: Problem, hm: Hypermodel) -> np.ndarray:
    residual = p.y[:, None] - p.A @ points.T
    return np.sum(residual ** 2, axis=0) / (2.0 * p.n) + hm.lam * regularizer_eta(points, hm)


def grid_minimize_F(p: Problem, hm: Hypermodel, box: Optional[Tuple[float, float]] = None,
                    resolution: float = GRID_RESOLUTION) -> np.ndarray:
    """
    Grid argmin of F for d <= 2.

    A grid of 201 points per axis is evaluated, then re-centred on the incumbent and
    shrunk until its spacing is below resolution/10. F is convex, so the incumbent's
    neighbourhood always contains the minimizer.
    """
    if p.d > 2:
        raise ValidationError(f"grid minimization is limited to d <= 2, got d={p.d}")
    lo, hi = box if box is not None else _default_box(p)
    lower = np.full(p.d, float(lo))
    upper = np.full(p.d, float(hi))
    while True:
        axes = [np.linspace(lower[i], upper[i], GRID_POINTS) for i in range(p.d)]
        mesh = np.stack([a.ravel() for a in np.meshgrid(*axes, indexing="ij")], axis=-1)
        best = mesh[int(np.argmin(_batch_F(mesh, p, hm)))]
        spacing = (upper - lower) / (GRID_POINTS - 1)
        if spacing.max() <= resolution / 10.0:
            return best
        lower, upper = best - 10.0 * spacing, best + 10.0 * spacing


def soft_threshold(z, t: float) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    return np.sign(z) * np.maximum(np.abs(z) - t, 0.0)


def group_soft_threshold(z, groups: GroupStructure, t: float) -> np.ndarray:
    """Block shrinkage z_g·max(1 − t/‖z_g‖, 0)."""
    z = np.asarray(z, dtype=float)
    out = np.zeros_like(z)
    for idx in groups.index_arrays:
        norm = np.linalg.norm(z[idx])
        if norm > t:
            out[idx] = z[idx] * (1.0 - t / norm)
    return out


def lasso_duality_gap(p: Problem, lam: float, u) -> float:
    """Relative duality gap of (1/2n)‖y − Au‖² + λ‖u‖₁ at u."""
    u = np.asarray(u, dtype=float)
    residual = p.y - p.A @ u
    primal = residual @ residual / (2.0 * p.n) + lam * np.abs(u).sum()
    correlation = np.abs(p.A.T @ residual).max()
    scale = 1.0 if correlation == 0 else min(1.0, p.n * lam / correlation)
    dual_point = scale * residual
    dual = (p.y @ p.y - (p.y - dual_point) @ (p.y - dual_point)) / (2.0 * p.n)
    return float((primal - dual) / max(primal, np.finfo(float).tiny))


def prox_l1_solve(p: Problem, lam: float, cfg: Optional[ProxConfig] = None,
                  hm: Optional[Hypermodel] = None) -> np.ndarray:
    """
    Proximal gradient (ISTA, or FISTA with adaptive restart) for
    (1/2n)‖y − Au‖² + λ‖u‖₁, or λΣ‖u_g‖ when `hm` is a group model with C_j = I.

    Stops when the gradient-mapping norm ‖L(u − prox(u − ∇f/L))‖∞ <= tol.
    """
    cfg = cfg or ProxConfig()
    if lam <= 0:
        raise ValidationError(f"lambda must be positive, got {lam}")
    groups = None
    if hm is not None and hm.variant == Variant.FRAME:
        raise ValidationError("the analysis-form proximal map has no closed form")
    if hm is not None and hm.variant == Variant.GROUP:
        if not hm.groups.is_identity:
            raise ValidationError("block soft-thresholding needs C_j = I")
        groups = hm.groups

    def prox(z: np.ndarray, t: float) -> np.ndarray:
        return soft_threshold(z, t) if groups is None else group_soft_threshold(z, groups, t)

    def smooth(u: np.ndarray) -> float:
        r = p.A @ u - p.y
        return r @ r / (2.0 * p.n)

    def grad(u: np.ndarray) -> np.ndarray:
        return p.A.T @ (p.A @ u - p.y) / p.n

    L = max(float(linalg.norm(p.A, 2)) ** 2 / p.n, np.finfo(float).tiny)
    if cfg.step_rule == StepRule.BACKTRACKING:
        L = max(L / 16.0, np.finfo(float).tiny)

    x = np.zeros(p.d)
    z = x.copy()
    t = 1.0
    for iteration in range(1, cfg.max_iters + 1):
        g = grad(z)
        while True:
            x_new = prox(z - g / L, lam / L)
            if cfg.step_rule == StepRule.FIXED:
                break
            diff = x_new - z
            if smooth(x_new) <= smooth(z) + g @ diff + 0.5 * L * diff @ diff + 1e-15 * abs(smooth(z)):
                break
            L *= 2.0

        mapping = L * (x_new - prox(x_new - grad(x_new) / L, lam / L))
        if np.abs(mapping).max() <= cfg.tol:
            logger.debug("prox solver converged in %d iterations", iteration)
            return x_new

        if cfg.accelerated:
            # restart momentum when it points uphill
            if (z - x_new) @ (x_new - x) > 0:
                t = 1.0
            t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
            z = x_new + ((t - 1.0) / t_new) * (x_new - x)
            t = t_new
        else:
            z = x_new
        x = x_new

    logger.warning("prox solver stopped at max_iters=%d without reaching tol=%.1e", cfg.max_iters, cfg.tol)
    return x
