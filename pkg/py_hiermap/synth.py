import logging
from typing import Optional, Union

import numpy as np
from scipy import linalg

from .constants import NORMALIZATION_RTOL
from .exceptions import ValidationError
from .hypermodel import local_radii
from .models import (
    DesignSpec,
    GroupStructure,
    Hypermodel,
    ModelSubspace,
    Problem,
    TightFrame,
    TruthKind,
    TruthSpec,
    Variant,
)

logger = logging.getLogger(__name__)


def derive_seed(master_seed: int, *keys: int) -> int:
    """Independent, reproducible child seed for the cell/trial identified by `keys`."""
    sequence = np.random.SeedSequence(entropy=int(master_seed), spawn_key=tuple(int(k) for k in keys))
    return int(sequence.generate_state(1, dtype=np.uint64)[0])


def gaussian_design(n: int, d: int, sigma_spec: Union[DesignSpec, str] = "identity", seed: int = 0) -> np.ndarray:
    """n×d matrix with i.i.d. N(0, Σ) rows; Σ = I or Σ_ij = ρ^|i−j|."""
    if n < 1 or d < 1:
        raise ValidationError(f"design needs n, d >= 1, got n={n}, d={d}")
    try:
        spec = sigma_spec if isinstance(sigma_spec, DesignSpec) else DesignSpec.model_validate(sigma_spec)
    except ValueError as e:
        raise ValidationError(f"invalid design {sigma_spec!r}: {e}")
    rng = np.random.default_rng(seed)
    Z = rng.standard_normal((n, d))
    if spec.kind == "identity" or spec.rho == 0.0:
        return Z
    sigma = linalg.toeplitz(spec.rho ** np.arange(d))
    return Z @ linalg.cholesky(sigma, lower=False)


def normalization_flags(A: np.ndarray, hm: Optional[Hypermodel] = None) -> dict:
    """Which of the column / block / frame normalizations hold to 1e-8 relative."""
    n = A.shape[0]
    root_n = np.sqrt(n)
    flags = {
        "column_normalized": bool(np.all(np.abs(np.linalg.norm(A, axis=0) / root_n - 1.0) <= NORMALIZATION_RTOL)),
        "block_normalized": False,
        "frame_normalized": False,
    }
    if hm is not None and hm.variant == Variant.GROUP:
        norms = _block_norms(A, hm.groups) / root_n
        flags["block_normalized"] = bool(np.all(np.abs(norms - 1.0) <= NORMALIZATION_RTOL))
    if hm is not None and hm.variant == Variant.FRAME:
        norms = np.linalg.norm(A @ hm.frame.W, axis=0) / root_n
        flags["frame_normalized"] = bool(np.all(np.abs(norms - 1.0) <= NORMALIZATION_RTOL))
    return flags


def _block_norms(A: np.ndarray, groups: GroupStructure, check_rank: bool = False) -> np.ndarray:
    norms = np.empty(groups.k)
    for j, idx in enumerate(groups.index_arrays):
        block = A[:, idx] @ groups.cholesky_factors[j]
        singular = linalg.svdvals(block)
        if check_rank and (singular[0] == 0.0 or singular[-1] <= 1e-12 * singular[0] or block.shape[0] < block.shape[1]):
            raise ValidationError(f"block {j} of the forward map is rank-deficient")
        norms[j] = singular[0]
    return norms


def normalize(p: Problem, hm: Hypermodel) -> Problem:
    """
    Rescale A to the variant's normalization and co-transform u★.

    Coordinate: ‖A_j‖₂/√n = 1. Group: ‖A_{g_j} L_j‖_op/√n = 1. Frame: one global
    scale with max_j ‖(AW)_j‖₂/√n = 1 (individual composite columns of an
    overcomplete frame cannot all be fixed by rescaling d columns).
    With A' = A·diag(s) the truth becomes u★' = u★/s and y = A'u★' + ε is regenerated.
    """
    A = p.A
    root_n = np.sqrt(p.n)
    if hm.variant == Variant.COORDINATE:
        norms = np.linalg.norm(A, axis=0)
        if np.any(norms == 0.0):
            raise ValidationError("cannot normalize a forward map with a zero column")
        scale = root_n / norms
    elif hm.variant == Variant.GROUP:
        norms = _block_norms(A, hm.groups, check_rank=True)
        scale = np.empty(p.d)
        for j, idx in enumerate(hm.groups.index_arrays):
            scale[idx] = root_n / norms[j]
    else:
        composite = np.linalg.norm(A @ hm.frame.W, axis=0)
        if composite.max() == 0.0:
            raise ValidationError("cannot normalize a forward map that annihilates the frame")
        scale = np.full(p.d, root_n / composite.max())

    A_new = A * scale
    u_star = None if p.u_star is None else p.u_star / scale
    if u_star is not None and p.eps is not None:
        y = A_new @ u_star + p.eps
    else:
        y = p.y
    cumulative = scale if p.scaling is None else p.scaling * scale
    flags = normalization_flags(A_new, hm)
    logger.debug("normalized %s problem: %s", hm.variant.value, flags)
    return Problem(A=A_new, y=y, u_star=u_star, eps=p.eps, scaling=cumulative, **flags)


def lq_membership(u, q: float) -> float:
    """Σ_j |u_j|^q."""
    return float(np.sum(np.abs(np.asarray(u, dtype=float)) ** q))


def _lq_profile(m: int, spec: TruthSpec) -> np.ndarray:
    ranks = np.arange(1, m + 1, dtype=float)
    profile = ranks ** (-(1.0 + spec.margin) / spec.q)
    # c^q Σ profile^q = R_q
    return profile * (spec.radius / np.sum(profile ** spec.q)) ** (1.0 / spec.q)


def _signs(rng: np.random.Generator, size: int) -> np.ndarray:
    return rng.choice(np.array([-1.0, 1.0]), size=size)


def _group_blocks(d: int, groups: GroupStructure, active: np.ndarray, norms: np.ndarray,
                  rng: np.random.Generator) -> np.ndarray:
    u = np.zeros(d)
    for j, target in zip(active, norms):
        idx = groups.index_arrays[j]
        z = rng.standard_normal(idx.size)
        radius = np.linalg.norm(linalg.solve_triangular(groups.cholesky_factors[j], z, lower=True))
        u[idx] = target * z / radius
    return u


def make_truth(d: int, spec: TruthSpec, groups: Optional[GroupStructure] = None,
               frame: Optional[TightFrame] = None) -> np.ndarray:
    """
    Ground truth of the requested sparsity class.

    lq-ball truths follow the power profile c·j^{−(1+margin)/q} with Σ|·|^q = R_q, applied to
    coordinates, to group norms (with `groups`) or to synthesis coefficients (with `frame`).
    Frame-compressible truths are u = Wc with s-sparse c.
    """
    rng = np.random.default_rng(spec.seed)
    kind = spec.kind

    if kind == TruthKind.HARD_SPARSE:
        if spec.s > d:
            raise ValidationError(f"sparsity s={spec.s} exceeds d={d}")
        u = np.zeros(d)
        support = rng.choice(d, size=spec.s, replace=False)
        u[support] = spec.amplitude * _signs(rng, spec.s)
        return u

    if kind == TruthKind.GROUP_SPARSE:
        if groups is None:
            raise ValidationError("group-sparse truths need a group structure")
        if groups.d != d or spec.s > groups.k:
            raise ValidationError(f"cannot activate {spec.s} of {groups.k} groups in dimension {d}")
        active = rng.choice(groups.k, size=spec.s, replace=False)
        return _group_blocks(d, groups, active, np.full(spec.s, spec.amplitude), rng)

    if kind == TruthKind.FRAME_COMPRESSIBLE:
        if frame is None:
            raise ValidationError("frame-compressible truths need a tight frame")
        if frame.d != d or spec.s > frame.k:
            raise ValidationError(f"cannot draw {spec.s} of {frame.k} frame coefficients in dimension {d}")
        c = np.zeros(frame.k)
        c[rng.choice(frame.k, size=spec.s, replace=False)] = spec.amplitude * _signs(rng, spec.s)
        return frame.W @ c

    if groups is not None:
        if groups.d != d:
            raise ValidationError(f"group structure has d={groups.d}, expected {d}")
        norms = _lq_profile(groups.k, spec)
        order = rng.permutation(groups.k)
        return _group_blocks(d, groups, order, norms, rng)
    if frame is not None:
        if frame.d != d:
            raise ValidationError(f"frame has d={frame.d}, expected {d}")
        c = np.zeros(frame.k)
        c[rng.permutation(frame.k)] = _lq_profile(frame.k, spec) * _signs(rng, frame.k)
        return frame.W @ c
    u = np.zeros(d)
    u[rng.permutation(d)] = _lq_profile(d, spec) * _signs(rng, d)
    return u


def threshold_support(u, delta: float, hm: Hypermodel) -> ModelSubspace:
    """Indices whose magnitude |u_j|, ‖u_{g_j}‖_{C_j} or |(Wᵀu)_j| exceeds δ."""
    if delta <= 0:
        raise ValidationError(f"threshold delta must be positive, got {delta}")
    u = np.asarray(u, dtype=float)
    radii = local_radii(u, hm)
    return ModelSubspace(
        variant=hm.variant,
        support=np.nonzero(radii > delta)[0].tolist(),
        d=u.shape[0],
        groups=hm.groups,
        frame=hm.frame,
    )


def exact_support(u, hm: Hypermodel) -> ModelSubspace:
    """Support of u: every index with a nonzero magnitude."""
    return threshold_support(u, np.finfo(float).tiny, hm)


def make_problem(n: int, d: int, design: Union[DesignSpec, str], truth: TruthSpec, hm: Hypermodel,
                 seed: int, normalize_design: bool = True) -> Problem:
    """
    Design, truth, noise ε ~ N(0, I) and y = Au★ + ε, then optional normalization.

    Design, truth and noise streams are derived from `seed`; `truth.seed` is ignored.
    """
    A = gaussian_design(n, d, design, derive_seed(seed, 0))
    truth_spec = truth.model_copy(update={"seed": derive_seed(seed, 1)})
    u_star = make_truth(d, truth_spec, groups=hm.groups, frame=hm.frame)
    eps = np.random.default_rng(derive_seed(seed, 2)).standard_normal(n)
    problem = Problem(A=A, y=A @ u_star + eps, u_star=u_star, eps=eps)
    if normalize_design:
        problem = normalize(problem, hm)
    return problem
