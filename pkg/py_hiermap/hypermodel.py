"""
Objectives, regularizers and norms of the three hierarchical models.

Every function accepts a single vector of length d. Functions documented as
batched also accept an array of shape (..., d) and evaluate along the last axis.
"""
import logging
from typing import Optional, Tuple, Union

import numpy as np
from scipy import linalg

from .constants import ETA_UPPER
from .exceptions import DimensionError, ValidationError
from .models import Hypermodel, Problem, ThetaVector, Variant

logger = logging.getLogger(__name__)

SQRT2 = np.sqrt(2.0)

ThetaLike = Union[ThetaVector, np.ndarray]


def _vector(u, hm: Hypermodel, name: str = "u") -> np.ndarray:
    arr = np.asarray(u, dtype=float)
    if arr.ndim == 0:
        raise DimensionError(f"{name} must be a vector")
    if hm.d is not None and arr.shape[-1] != hm.d:
        raise DimensionError(f"{name} has length {arr.shape[-1]}, expected d={hm.d}", hm.d, arr.shape[-1])
    return arr


def _theta(theta: ThetaLike, m: int) -> np.ndarray:
    values = theta.theta if isinstance(theta, ThetaVector) else np.asarray(theta, dtype=float)
    if values.shape[-1] != m:
        raise DimensionError(f"theta has length {values.shape[-1]}, expected {m}", m, values.shape[-1])
    if not np.all(values > 0):
        raise ValidationError("theta entries must be positive")
    return values


def theta_closed_form(radius, eta: float) -> np.ndarray:
    """
    Minimizer of θ ↦ r²/(2θ) + θ − η log θ, i.e. η/2 + √(η²/4 + r²/2).

    The square root is evaluated as hypot(η/2, r/√2), which avoids cancellation for tiny η.
    """
    half = 0.5 * eta
    return half + np.hypot(half, np.asarray(radius, dtype=float) / SQRT2)


def local_radii(u, hm: Hypermodel) -> np.ndarray:
    """
    Per-index magnitudes r_j: |u_j|, ‖u_{g_j}‖_{C_j} or |(Wᵀu)_j|. Batched.

    The group norm is ‖x‖_C = √(xᵀC⁻¹x) = ‖L⁻¹x‖ with C = LLᵀ.
    """
    u = _vector(u, hm)
    if hm.variant == Variant.COORDINATE:
        return np.abs(u)
    if hm.variant == Variant.FRAME:
        return np.abs(u @ hm.frame.W)

    structure = hm.groups
    radii = np.empty(u.shape[:-1] + (structure.k,))
    for j, idx in enumerate(structure.index_arrays):
        block = u[..., idx]
        if structure.is_identity:
            radii[..., j] = np.linalg.norm(block, axis=-1)
        else:
            white = linalg.solve_triangular(structure.cholesky_factors[j], block.T, lower=True)
            radii[..., j] = np.linalg.norm(white, axis=0)
    return radii


def f_map(u, hm: Hypermodel) -> ThetaVector:
    """Closed-form θ-update: the minimizer of J(u, ·) for fixed u."""
    u = _vector(u, hm)
    if u.ndim != 1:
        raise DimensionError("f_map takes a single vector")
    return ThetaVector(theta=theta_closed_form(local_radii(u, hm), hm.eta), eta=hm.eta)


def _penalty_terms(radii: np.ndarray, theta: np.ndarray, eta: float) -> np.ndarray:
    # log θ is taken after clamping at η; θ >= η holds exactly for closed-form values.
    return radii ** 2 / (2.0 * theta) + theta - eta * np.log(np.maximum(theta, eta))


def regularizer_eta(u, hm: Hypermodel):
    """R_η(u) = (1/√2) Σ_j [r_j²/(2f_j) + f_j − η log f_j]. Batched."""
    radii = local_radii(u, hm)
    f = theta_closed_form(radii, hm.eta)
    return _penalty_terms(radii, f, hm.eta).sum(axis=-1) / SQRT2


def regularizer_grad(u, hm: Hypermodel) -> np.ndarray:
    """Gradient of R_η (envelope theorem). Batched."""
    u = _vector(u, hm)
    radii = local_radii(u, hm)
    weight = 1.0 / (SQRT2 * theta_closed_form(radii, hm.eta))
    if hm.variant == Variant.COORDINATE:
        return u * weight
    if hm.variant == Variant.FRAME:
        W = hm.frame.W
        return ((u @ W) * weight) @ W.T

    structure = hm.groups
    grad = np.empty_like(u)
    for j, idx in enumerate(structure.index_arrays):
        block = u[..., idx]
        if not structure.is_identity:
            block = block @ structure.inverses[j]
        grad[..., idx] = block * weight[..., j:j + 1]
    return grad


def decomposable_norm(u, hm: Hypermodel):
    """Limiting norm R: ‖u‖₁, Σ‖u_{g_j}‖_{C_j} or ‖Wᵀu‖₁. Batched."""
    return local_radii(u, hm).sum(axis=-1)


def dual_norm(v, hm: Hypermodel):
    """
    R*(v): ‖v‖∞, max_j √(v_{g_j}ᵀ C_j v_{g_j}) or ‖Wᵀv‖∞. Batched.

    The group dual pairs with ‖x‖_C = √(xᵀC⁻¹x), so Hölder's inequality
    |⟨u, v⟩| <= R(u) R*(v) holds exactly.
    """
    v = _vector(v, hm, "v")
    if hm.variant == Variant.COORDINATE:
        return np.abs(v).max(axis=-1)
    if hm.variant == Variant.FRAME:
        return np.abs(v @ hm.frame.W).max(axis=-1)

    structure = hm.groups
    norms = []
    for j, idx in enumerate(structure.index_arrays):
        block = v[..., idx]
        if not structure.is_identity:
            block = block @ structure.cholesky_factors[j]
        norms.append(np.linalg.norm(block, axis=-1))
    return np.max(np.stack(norms, axis=-1), axis=-1)


def subgradient(u, hm: Hypermodel) -> np.ndarray:
    """
    A vector v with R*(v) = 1 and ⟨u, v⟩ = R(u) (coordinate and group variants).

    Zero components (or groups) get a zero subgradient.
    """
    u = _vector(u, hm)
    if hm.variant == Variant.COORDINATE:
        return np.sign(u)
    if hm.variant == Variant.FRAME:
        raise ValidationError("the analysis norm has no closed-form dual-attaining vector")
    structure = hm.groups
    radii = local_radii(u, hm)
    v = np.zeros_like(u)
    for j, idx in enumerate(structure.index_arrays):
        if radii[j] > 0:
            block = u[idx] if structure.is_identity else structure.inverses[j] @ u[idx]
            v[idx] = block / radii[j]
    return v


def data_fit(u, p: Problem) -> float:
    residual = p.y - p.A @ np.asarray(u, dtype=float)
    return float(residual @ residual) / (2.0 * p.n)


def _check_problem(u: np.ndarray, p: Problem, hm: Hypermodel) -> None:
    if u.shape[-1] != p.d:
        raise DimensionError(f"u has length {u.shape[-1]}, problem has d={p.d}", p.d, u.shape[-1])
    if hm.d is not None and hm.d != p.d:
        raise DimensionError(f"hypermodel has d={hm.d}, problem has d={p.d}", hm.d, p.d)


def penalty_theta(u, theta: ThetaLike, hm: Hypermodel) -> float:
    """(λ/(2√2)) Σ r_j²/θ_j + (λ/√2) Σ (θ_j − η log θ_j)."""
    radii = local_radii(u, hm)
    values = _theta(theta, radii.shape[-1])
    terms = radii ** 2 / (2.0 * values) + values - hm.eta * np.log(values)
    return float(hm.lam * terms.sum() / SQRT2)


def objective_J(u, theta: ThetaLike, p: Problem, hm: Hypermodel) -> float:
    """Negative log-posterior J(u, θ) up to an additive constant."""
    u = _vector(u, hm)
    _check_problem(u, p, hm)
    return data_fit(u, p) + penalty_theta(u, theta, hm)


def objective_F(u, p: Problem, hm: Hypermodel) -> float:
    """F(u) = (1/2n)‖y − Au‖² + λ R_η(u)."""
    u = _vector(u, hm)
    _check_problem(u, p, hm)
    return data_fit(u, p) + hm.lam * float(regularizer_eta(u, hm))


def gradient_F(u, p: Problem, hm: Hypermodel) -> np.ndarray:
    """∇F(u) = Aᵀ(Au − y)/n + λ ∇R_η(u)."""
    u = _vector(u, hm)
    _check_problem(u, p, hm)
    return p.A.T @ (p.A @ u - p.y) / p.n + hm.lam * regularizer_grad(u, hm)


def _index_count(hm: Hypermodel, d: Optional[int]) -> int:
    m = hm.m if hm.m is not None else d
    if m is None:
        raise ValidationError("the coordinate model needs d to size its constants")
    return m


def _check_eta_range(eta: float) -> None:
    if not 0.0 < eta < ETA_UPPER:
        raise ValidationError(f"eta must lie in (0, 1/2), got {eta}")


def sandwich_bounds(u, hm: Hypermodel) -> Tuple:
    """
    Lower and upper affine bounds around R_η:

        (1 − η/2) R(u) − mη/√2 <= R_η(u) <= R(u) + mη(1 − log η)/√2

    with m = d for the coordinate model and m = k otherwise. Batched.
    """
    _check_eta_range(hm.eta)
    u = _vector(u, hm)
    eta = hm.eta
    m = _index_count(hm, u.shape[-1])
    norm = decomposable_norm(u, hm)
    lower = (1.0 - eta / 2.0) * norm - m * eta / SQRT2
    upper = norm + m * eta * (1.0 - np.log(eta)) / SQRT2
    return lower, upper


def approx_decomp_constants(hm: Hypermodel, d: Optional[int] = None) -> Tuple[float, float]:
    """c₁ = η/2 and c₂ = (mη/√2)(2 − log η)."""
    _check_eta_range(hm.eta)
    m = _index_count(hm, d)
    eta = hm.eta
    return eta / 2.0, float(m * eta / SQRT2 * (2.0 - np.log(eta)))
