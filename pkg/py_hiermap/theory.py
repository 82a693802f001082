import logging
from typing import Optional, Tuple, Union

import numpy as np

from .constants import ETA_UPPER, RSC_GAUSSIAN_SAMPLES
from .exceptions import DimensionError, ValidationError
from .hypermodel import approx_decomp_constants, decomposable_norm, dual_norm
from .models import (
    BoundKind,
    Hypermodel,
    ModelSubspace,
    RadiusResult,
    RhsBreakdown,
    RhsParams,
    RscEstimate,
    Variant,
)

logger = logging.getLogger(__name__)

SQRT2 = np.sqrt(2.0)
_BATCH = 2048


def project(u, M: ModelSubspace, onto: str = "M") -> np.ndarray:
    """
    Euclidean projection onto M (onto="M") or M⊥ (onto="M_perp").

    Coordinate and group subspaces keep or zero entries. The frame subspace
    {u : (Wᵀu)_j = 0, j ∉ S} is projected onto through an orthonormal basis of
    the null space of the constraint rows.
    """
    u = np.asarray(u, dtype=float)
    if u.shape[-1] != M.d:
        raise DimensionError(f"u has length {u.shape[-1]}, subspace has d={M.d}", M.d, u.shape[-1])
    if onto not in ("M", "M_perp"):
        raise ValidationError(f"onto must be 'M' or 'M_perp', got {onto!r}")
    if M.variant == Variant.FRAME:
        basis = M.basis
        inside = (u @ basis) @ basis.T
    else:
        inside = u * M.mask
    return inside if onto == "M" else u - inside


def cone_check(delta, u_star, M: ModelSubspace, hm: Hypermodel) -> Tuple[bool, float]:
    """
    Membership of Δ in {R(Δ_{M⊥}) <= 7R(Δ_M) + 8R(u★_{M⊥}) + 4c₁R(u★_M) + 4c₂}.

    :return: (member, slack) with slack = right-hand side − left-hand side.
    """
    if not hm.eta < ETA_UPPER:
        raise ValidationError(f"the cone condition needs eta < 1/2, got {hm.eta}")
    delta = np.asarray(delta, dtype=float)
    u_star = np.asarray(u_star, dtype=float)
    c1, c2 = approx_decomp_constants(hm, d=delta.shape[-1])
    lhs = float(decomposable_norm(project(delta, M, "M_perp"), hm))
    rhs = float(
        7.0 * decomposable_norm(project(delta, M, "M"), hm)
        + 8.0 * decomposable_norm(project(u_star, M, "M_perp"), hm)
        + 4.0 * c1 * decomposable_norm(project(u_star, M, "M"), hm)
        + 4.0 * c2
    )
    slack = rhs - lhs
    return slack >= 0.0, slack


def subspace_lipschitz(M: ModelSubspace, hm: Hypermodel) -> float:
    """
    Ψ(M) = sup_{u ∈ M} R(u)/‖u‖₂.

    Coordinate: √s. Group: √(|S| / min_{j∈S} λ_min(C_j)), exact when the active C_j
    share their smallest eigenvalue. Frame: √|S_W|.
    """
    if M.size == 0:
        return 0.0
    if M.variant == Variant.GROUP:
        return float(np.sqrt(M.size / M.groups.min_eigenvalues[M.support].min()))
    return float(np.sqrt(M.size))


def psi_exact_group(M: ModelSubspace, hm: Hypermodel) -> float:
    """√(Σ_{j∈S} 1/λ_min(C_j)), attained on the bottom eigenvectors of the active blocks."""
    if M.variant != Variant.GROUP:
        raise ValidationError("psi_exact_group applies to group subspaces")
    if M.size == 0:
        return 0.0
    return float(np.sqrt(np.sum(1.0 / M.groups.min_eigenvalues[M.support])))


def _cone_directions(count: int, hm: Hypermodel, d: int, rng: np.random.Generator) -> np.ndarray:
    """Directions with few active coordinates, groups or frame coefficients."""
    out = np.zeros((count, d))
    if hm.variant == Variant.FRAME:
        k = hm.frame.k
        for i in range(count):
            s = rng.integers(1, max(2, k // 8) + 1)
            c = np.zeros(k)
            c[rng.choice(k, size=s, replace=False)] = rng.standard_normal(s)
            out[i] = hm.frame.W @ c
    elif hm.variant == Variant.GROUP:
        structure = hm.groups
        for i in range(count):
            s = rng.integers(1, max(2, structure.k // 8) + 1)
            for j in rng.choice(structure.k, size=s, replace=False):
                idx = structure.index_arrays[j]
                out[i, idx] = rng.standard_normal(idx.size)
    else:
        for i in range(count):
            s = rng.integers(1, max(2, d // 8) + 1)
            out[i, rng.choice(d, size=s, replace=False)] = rng.standard_normal(s)
    return out


def rsc_estimate(A, hm: Hypermodel, tau_sq: float, n_samples: int = RSC_GAUSSIAN_SAMPLES, seed: int = 0,
                 cone_samples: Optional[int] = None) -> RscEstimate:
    """
    Largest κ with ‖AΔ‖²/2n >= (κ/2)‖Δ‖² − τ²R(Δ)² on all sampled directions.

    Samples `n_samples` Gaussian directions and `cone_samples` sparse directions
    (default n_samples/10), so κ = 2·min (‖AΔ‖²/2n + τ²R(Δ)²)/‖Δ‖².
    min_margin is the smallest sampled ‖AΔ‖²/(n‖Δ‖²), the τ = 0 curvature.
    """
    if tau_sq < 0:
        raise ValidationError(f"tau_sq must be nonnegative, got {tau_sq}")
    if n_samples < 1:
        raise ValidationError(f"n_samples must be positive, got {n_samples}")
    A = np.asarray(A, dtype=float)
    n, d = A.shape
    if cone_samples is None:
        cone_samples = max(1, n_samples // 10) if n_samples >= 10 else 0
    gram = A.T @ A / n
    rng = np.random.default_rng(seed)

    ratio_min = np.inf
    curvature_min = np.inf
    remaining = [("gaussian", n_samples), ("cone", cone_samples)]
    for family, total in remaining:
        done = 0
        while done < total:
            count = min(_BATCH, total - done)
            if family == "gaussian":
                directions = rng.standard_normal((count, d))
            else:
                directions = _cone_directions(count, hm, d, rng)
            sq = np.einsum("ij,jk,ik->i", directions, gram, directions)
            norm_sq = np.einsum("ij,ij->i", directions, directions)
            keep = norm_sq > 0
            reg = decomposable_norm(directions[keep], hm) ** 2
            ratios = (sq[keep] / 2.0 + tau_sq * reg) / norm_sq[keep]
            ratio_min = min(ratio_min, float(ratios.min()))
            curvature_min = min(curvature_min, float((sq[keep] / norm_sq[keep]).min()))
            done += count
    total = n_samples + cone_samples
    estimate = RscEstimate(kappa=2.0 * ratio_min, tau_sq=tau_sq, n_samples=total, min_margin=curvature_min)
    logger.debug("rsc estimate over %d directions: kappa=%.4f", total, estimate.kappa)
    return estimate


def lambda_threshold(A, eps, hm: Hypermodel) -> float:
    """2·R*(Aᵀε/n), the smallest λ covered by the cone and error-bound arguments."""
    A = np.asarray(A, dtype=float)
    eps = np.asarray(eps, dtype=float)
    if eps.shape != (A.shape[0],):
        raise DimensionError(f"eps has length {eps.shape[0]}, expected n={A.shape[0]}", A.shape[0], eps.shape[0])
    return 2.0 * float(dual_norm(A.T @ eps / A.shape[0], hm))


def error_radius(u_star, M: ModelSubspace, hm: Hypermodel, kappa: float, tau_sq: float, lam: float,
                 lambda_min: Optional[float] = None) -> RadiusResult:
    """
    Explicit squared-error radius

        δ = 72 λ²Ψ²/κ² + (8/κ)(64τ²[4R²(u★_{M⊥}) + c₁²R²(u★_M) + c₂²] + λ[c₁R(u★_M) + 2R(u★_{M⊥}) + c₂])

    with ‖û − u★‖² <= δ when τΨ(M) <= √κ/32 and λ >= lambda_min. Violated
    hypotheses are flagged on the result, never silently dropped.
    """
    u_star = np.asarray(u_star, dtype=float)
    psi = subspace_lipschitz(M, hm)
    c1, c2 = approx_decomp_constants(hm, d=u_star.shape[-1])
    r_in = float(decomposable_norm(project(u_star, M, "M"), hm))
    r_out = float(decomposable_norm(project(u_star, M, "M_perp"), hm))

    rsc_ok = kappa > 0 and np.sqrt(tau_sq) * psi <= np.sqrt(kappa) / 32.0
    lambda_ok = lambda_min is None or lam >= lambda_min
    if kappa > 0:
        delta = (
            72.0 * lam ** 2 * psi ** 2 / kappa ** 2
            + (8.0 / kappa) * (
                64.0 * tau_sq * (4.0 * r_out ** 2 + c1 ** 2 * r_in ** 2 + c2 ** 2)
                + lam * (c1 * r_in + 2.0 * r_out + c2)
            )
        )
    else:
        delta = np.inf
    if not rsc_ok:
        logger.warning("RSC hypothesis fails: tau*psi=%.4g > sqrt(kappa)/32=%.4g",
                       np.sqrt(tau_sq) * psi, np.sqrt(max(kappa, 0.0)) / 32.0)
    if not lambda_ok:
        logger.warning("lambda=%.4g is below the noise threshold %.4g", lam, lambda_min)
    return RadiusResult(delta=float(delta), psi=psi, kappa=kappa, tau_sq=tau_sq, lam=lam,
                        lambda_threshold=lambda_min, rsc_ok=bool(rsc_ok), lambda_ok=bool(lambda_ok))


def _eta_term(params: RhsParams, head: float, spread: float) -> float:
    eta = params.eta
    a = eta * head
    return params.tau_sq / params.kappa * (a ** 2 + spread ** 2) + params.lam / params.kappa * (a + spread)


def theorem4_rhs(kind: Union[BoundKind, str], params: RhsParams) -> RhsBreakdown:
    """
    Constant-free error bound split into estimation, approximation and η terms.

    Sparse form (s given): s λ²/κ². lq form (q, R_q, δ given): (λ²/κ²)R_q δ^{−q} plus the
    approximation error (τ²/κ + λ/κ) R_q δ^{1−q}. The η term is
    (τ²/κ)(η²H² + B²) + (λ/κ)(ηH + B), where H is the head norm (R_q^{1/q} by default
    for lq) and B = dη(2 − log η)/√2 for hard sparsity, mη(2 − log η) otherwise.
    """
    kind = BoundKind(kind)
    p = params
    spread = p.m * p.eta * (2.0 - np.log(p.eta))
    if kind == BoundKind.HARD:
        spread /= SQRT2
    lq_form = kind == BoundKind.LQ or (kind != BoundKind.HARD and p.s is None)

    if lq_form:
        if p.q is None or p.radius is None or p.delta is None:
            raise ValidationError(f"{kind.value} bound in lq form needs q, R_q and delta")
        estimation = p.lam ** 2 / p.kappa ** 2 * p.radius * p.delta ** (-p.q)
        approximation = (p.tau_sq / p.kappa + p.lam / p.kappa) * p.radius * p.delta ** (1.0 - p.q)
        head = p.head if p.head is not None else p.radius ** (1.0 / p.q)
    else:
        if p.s is None:
            raise ValidationError(f"{kind.value} bound needs s")
        estimation = p.s * p.lam ** 2 / p.kappa ** 2
        approximation = 0.0
        head = p.head if p.head is not None else 0.0
    return RhsBreakdown(estimation=float(estimation), approximation=float(approximation),
                        eta_term=float(_eta_term(p, head, spread)))


def _require(params: RhsParams, *names: str) -> None:
    missing = [name for name in names if getattr(params, name) is None]
    if missing:
        raise ValidationError(f"missing parameters: {', '.join(missing)}")


def phi_eta(kind: Union[BoundKind, str], params: RhsParams) -> float:
    """
    η-perturbation factor of the rate results:

        hard:  √(log d/n)(ηH + (dη/√2)(2 − log η))
        lq:    √(log d/n)(ηR_q^{1/q} + (dη/√2)(2 − log η))
        group: √((p_max + log k)/n)(ηR_q^{1/q} + kη(2 − log η))
        frame: √(log k/n)(ηR_q^{1/q} + kη(2 − log η))
    """
    kind = BoundKind(kind)
    p = params
    _require(p, "n")
    eta = p.eta
    log_term = 2.0 - np.log(eta)
    if kind in (BoundKind.HARD, BoundKind.LQ):
        scale = np.sqrt(np.log(p.m) / p.n)
        spread = p.m * eta / SQRT2 * log_term
    elif kind == BoundKind.GROUP:
        _require(p, "p_max")
        scale = np.sqrt((p.p_max + np.log(p.m)) / p.n)
        spread = p.m * eta * log_term
    else:
        scale = np.sqrt(np.log(p.m) / p.n)
        spread = p.m * eta * log_term
    if kind == BoundKind.HARD:
        head = p.head if p.head is not None else 0.0
    elif p.head is not None:
        head = p.head
    else:
        _require(p, "q", "radius")
        head = p.radius ** (1.0 / p.q)
    return float(scale * (eta * head + spread))


def corollary_rate(kind: Union[BoundKind, str], params: RhsParams) -> float:
    """Leading rate: s log d/n, R_q(log d/n)^{1−q/2}, R_q((p_max + log k)/n)^{1−q/2}, R_q(log k/n)^{1−q/2}."""
    kind = BoundKind(kind)
    p = params
    _require(p, "n")
    if kind == BoundKind.HARD:
        _require(p, "s")
        return float(p.s * np.log(p.m) / p.n)
    if kind == BoundKind.GROUP:
        _require(p, "p_max")
        base = (p.p_max + np.log(p.m)) / p.n
    else:
        base = np.log(p.m) / p.n
    if p.q is None:
        # sparse group/frame truths: q = 0, R_q = s
        _require(p, "s")
        return float(p.s * base)
    _require(p, "radius")
    return float(p.radius * base ** (1.0 - p.q / 2.0))


def lambda_rule(variant: Union[Variant, str], n: int, m: int, p_max: Optional[int] = None) -> float:
    """4√(log d/n), 2(√(p_max/n) + √(log k/n)) or 4√(log k/n)."""
    variant = Variant(variant)
    if variant == Variant.GROUP:
        if p_max is None:
            raise ValidationError("the group lambda rule needs p_max")
        return float(2.0 * (np.sqrt(p_max / n) + np.sqrt(np.log(m) / n)))
    return float(4.0 * np.sqrt(np.log(m) / n))
