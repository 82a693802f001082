import logging
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from .exceptions import ValidationError
from .models import CovKind, FrameKind, GroupStructure, TightFrame

logger = logging.getLogger(__name__)

# Covariance spectra are drawn log-uniformly from this interval, so cond(C_j) <= 10.
_SPECTRUM = (1.0 / np.sqrt(10.0), np.sqrt(10.0))


def random_orthogonal(p: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-distributed p×p orthogonal matrix (QR of a Gaussian with sign fix)."""
    q, r = np.linalg.qr(rng.standard_normal((p, p)))
    return q * np.sign(np.diag(r))


def frame_defect(W: np.ndarray) -> Tuple[float, float]:
    """Return (‖WWᵀ − I‖_F, ‖(WᵀW)² − WᵀW‖_F)."""
    W = np.asarray(W, dtype=float)
    gram = W @ W.T
    tight = np.linalg.norm(gram - np.eye(W.shape[0]), "fro")
    proj = W.T @ W
    projector = np.linalg.norm(proj @ proj - proj, "fro")
    return float(tight), float(projector)


def make_tight_frame(d: int, kind: Union[FrameKind, str], seed: int, k: Optional[int] = None) -> TightFrame:
    """
    Build an exactly tight frame W (d×k, WWᵀ = I).

    :param d: Ambient dimension, at least 2.
    :param kind: identity-plus-orthobasis (k = 2d) or random-rows (any k >= d).
    :param seed: Seed; the frame is a deterministic function of it.
    :param k: Number of atoms for random-rows; defaults to 2d.
    """
    kind = FrameKind(kind)
    if d < 2:
        raise ValidationError(f"tight frames need d >= 2, got {d}")
    rng = np.random.default_rng(seed)
    if kind == FrameKind.IDENTITY_PLUS_ORTHOBASIS:
        if k is not None and k != 2 * d:
            raise ValidationError(f"identity-plus-orthobasis frames have k = 2d = {2 * d}, got {k}")
        q = random_orthogonal(d, rng)
        W = np.hstack([np.eye(d), q]) / np.sqrt(2.0)
    else:
        k = 2 * d if k is None else k
        if k < d:
            raise ValidationError(f"a tight frame needs k >= d, got d={d}, k={k}")
        # Orthonormal columns of a random k×d matrix are the orthonormal rows of W.
        q, _ = np.linalg.qr(rng.standard_normal((k, d)))
        W = q.T
    logger.debug("built %s frame with d=%d, k=%d", kind.value, d, W.shape[1])
    return TightFrame(W=W, kind=kind)


def make_groups(d: int, sizes: Sequence[int], cov_kind: Union[CovKind, str], seed: int) -> GroupStructure:
    """Contiguous groups of the given sizes with identity or random SPD covariances."""
    cov_kind = CovKind(cov_kind)
    sizes = [int(p) for p in sizes]
    if not sizes or any(p <= 0 for p in sizes):
        raise ValidationError(f"group sizes must be positive, got {sizes}")
    if sum(sizes) != d:
        raise ValidationError(f"group sizes sum to {sum(sizes)}, expected d={d}")
    bounds = np.cumsum([0] + sizes)
    groups = [list(range(lo, hi)) for lo, hi in zip(bounds[:-1], bounds[1:])]
    if cov_kind == CovKind.IDENTITY:
        return GroupStructure(groups=groups)

    rng = np.random.default_rng(seed)
    covariances = []
    for p in sizes:
        spectrum = np.exp(rng.uniform(np.log(_SPECTRUM[0]), np.log(_SPECTRUM[1]), size=p))
        q = random_orthogonal(p, rng)
        cov = (q * spectrum) @ q.T
        covariances.append((cov + cov.T) / 2.0)
    return GroupStructure(groups=groups, covariances=covariances)


def equal_groups(d: int, size: int, cov_kind: Union[CovKind, str] = CovKind.IDENTITY, seed: int = 0) -> GroupStructure:
    if d % size:
        raise ValidationError(f"d={d} is not a multiple of the group size {size}")
    return make_groups(d, [size] * (d // size), cov_kind, seed)
