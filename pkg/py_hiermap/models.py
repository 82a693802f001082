from enum import Enum
from functools import cached_property
from typing import Annotated, Any, Dict, List, Optional

import numpy as np
from pydantic import BaseModel, BeforeValidator, Field, PlainSerializer, field_validator, model_validator
from scipy import linalg

from .constants import (
    CG_MAX_ITERS,
    CG_TOL,
    ETA_UPPER,
    LQ_DECAY_MARGIN,
    PROJECTOR_TOL,
    SOLVER_MAX_ITERS,
    SOLVER_TOL_GRAD,
    SOLVER_TOL_U,
    TIGHT_FRAME_TOL,
)
from .exceptions import PropertyViolation


def _as_vector(value: Any) -> np.ndarray:
    arr = np.array(value, dtype=float)
    if arr.ndim != 1:
        raise ValueError(f"expected a 1-D array, got shape {arr.shape}")
    return arr


def _as_matrix(value: Any) -> np.ndarray:
    arr = np.array(value, dtype=float)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != 2:
        raise ValueError(f"expected a 2-D array, got shape {arr.shape}")
    return arr


def _split_list(value: Any) -> Any:
    if isinstance(value, str):
        return [item.strip() for item in value.split(",") if item.strip()]
    return value


def check_eta(value: float) -> float:
    if not 0.0 < value < ETA_UPPER:
        raise ValueError(f"eta must lie in (0, 1/2), got {value}")
    return value


_to_list = PlainSerializer(lambda a: a.tolist(), return_type=list, when_used="json")

Vector = Annotated[np.ndarray, BeforeValidator(_as_vector), _to_list]
Matrix = Annotated[np.ndarray, BeforeValidator(_as_matrix), _to_list]


class HierBaseModel(BaseModel):
    class Config:
        populate_by_name = True
        arbitrary_types_allowed = True


class Variant(str, Enum):
    COORDINATE = "coordinate"
    GROUP = "group"
    FRAME = "frame"


class FrameKind(str, Enum):
    IDENTITY_PLUS_ORTHOBASIS = "identity-plus-orthobasis"
    RANDOM_ROWS = "random-rows"


class CovKind(str, Enum):
    IDENTITY = "identity"
    RANDOM = "random"


class GroupStructure(HierBaseModel):
    """Disjoint contiguous-or-not index groups with one SPD matrix per group."""
    groups: List[List[int]]
    covariances: Optional[List[Matrix]] = None

    @model_validator(mode="after")
    def _check_partition(self) -> "GroupStructure":
        if not self.groups or any(len(g) == 0 for g in self.groups):
            raise ValueError("groups must be non-empty index lists")
        flat = sorted(i for g in self.groups for i in g)
        if flat != list(range(len(flat))):
            raise ValueError("groups must be disjoint and cover 0..d-1")
        if self.covariances is None:
            self.covariances = [np.eye(len(g)) for g in self.groups]
        if len(self.covariances) != len(self.groups):
            raise ValueError("one covariance matrix per group is required")
        for g, cov in zip(self.groups, self.covariances):
            if cov.shape != (len(g), len(g)):
                raise ValueError(f"covariance of shape {cov.shape} does not match group size {len(g)}")
            if not np.allclose(cov, cov.T, rtol=0.0, atol=1e-12 * max(1.0, np.abs(cov).max())):
                raise ValueError("group covariances must be symmetric")
            try:
                np.linalg.cholesky(cov)
            except np.linalg.LinAlgError:
                raise ValueError("group covariances must be positive definite")
        return self

    @property
    def d(self) -> int:
        return sum(len(g) for g in self.groups)

    @property
    def k(self) -> int:
        return len(self.groups)

    @property
    def sizes(self) -> List[int]:
        return [len(g) for g in self.groups]

    @property
    def p_max(self) -> int:
        return max(self.sizes)

    @cached_property
    def index_arrays(self) -> List[np.ndarray]:
        return [np.asarray(g, dtype=int) for g in self.groups]

    @cached_property
    def cholesky_factors(self) -> List[np.ndarray]:
        """Lower factors L_j with C_j = L_j L_jᵀ."""
        return [np.linalg.cholesky(c) for c in self.covariances]

    @cached_property
    def inverses(self) -> List[np.ndarray]:
        return [linalg.cho_solve((L, True), np.eye(L.shape[0])) for L in self.cholesky_factors]

    @cached_property
    def min_eigenvalues(self) -> np.ndarray:
        return np.array([linalg.eigvalsh(c)[0] for c in self.covariances])

    @cached_property
    def is_identity(self) -> bool:
        return all(np.array_equal(c, np.eye(c.shape[0])) for c in self.covariances)


class TightFrame(HierBaseModel):
    """Analysis operator Wᵀ of a tight frame, W of shape d×k with WWᵀ = I."""
    W: Matrix
    kind: Optional[FrameKind] = None

    @model_validator(mode="after")
    def _check_tight(self) -> "TightFrame":
        from .frames import frame_defect

        d, k = self.W.shape
        if k < d:
            raise ValueError(f"a tight frame needs k >= d, got d={d}, k={k}")
        tight, projector = frame_defect(self.W)
        if tight > TIGHT_FRAME_TOL:
            raise ValueError(f"||WW^T - I||_F = {tight:.3e} exceeds {TIGHT_FRAME_TOL}")
        if projector > PROJECTOR_TOL:
            raise ValueError(f"W^T W is not a projector (defect {projector:.3e})")
        return self

    @property
    def d(self) -> int:
        return self.W.shape[0]

    @property
    def k(self) -> int:
        return self.W.shape[1]


class Hypermodel(HierBaseModel):
    """Active hierarchical model: variant, hyperparameters and structure."""
    variant: Variant
    eta: float
    lam: float = Field(..., alias="lambda", gt=0)
    d: Optional[int] = Field(None, ge=1)
    groups: Optional[GroupStructure] = None
    frame: Optional[TightFrame] = None

    @field_validator("eta")
    @classmethod
    def _check_eta(cls, value: float) -> float:
        return check_eta(value)

    @model_validator(mode="after")
    def _check_structure(self) -> "Hypermodel":
        if self.variant == Variant.GROUP:
            if self.groups is None:
                raise ValueError("the group variant needs a group structure")
            self._match_dim(self.groups.d)
        elif self.variant == Variant.FRAME:
            if self.frame is None:
                raise ValueError("the frame variant needs a tight frame")
            self._match_dim(self.frame.d)
        return self

    def _match_dim(self, d: int) -> None:
        if self.d is not None and self.d != d:
            raise ValueError(f"d={self.d} disagrees with structure dimension {d}")
        self.d = d

    @property
    def m(self) -> Optional[int]:
        """Number of hyperparameters θ: d, or the number of groups / frame atoms."""
        if self.variant == Variant.GROUP:
            return self.groups.k
        if self.variant == Variant.FRAME:
            return self.frame.k
        return self.d


class Problem(HierBaseModel):
    """Linear inverse problem y = A u + ε with optional synthetic ground truth."""
    A: Matrix
    y: Vector
    u_star: Optional[Vector] = None
    eps: Optional[Vector] = None
    scaling: Optional[Vector] = None
    column_normalized: bool = False
    block_normalized: bool = False
    frame_normalized: bool = False

    @model_validator(mode="after")
    def _check_shapes(self) -> "Problem":
        n, d = self.A.shape
        if n < 1 or d < 1:
            raise ValueError("A must have at least one row and one column")
        if self.y.shape != (n,):
            raise ValueError(f"y has length {self.y.shape[0]}, expected n={n}")
        if self.u_star is not None and self.u_star.shape != (d,):
            raise ValueError(f"u_star has length {self.u_star.shape[0]}, expected d={d}")
        if self.eps is not None and self.eps.shape != (n,):
            raise ValueError(f"eps has length {self.eps.shape[0]}, expected n={n}")
        if self.scaling is not None and self.scaling.shape != (d,):
            raise ValueError("scaling must have one entry per column")
        if self.u_star is not None and self.eps is not None:
            gap = np.abs(self.y - self.A @ self.u_star - self.eps).max()
            if gap > 1e-8 * max(1.0, np.abs(self.y).max()):
                raise ValueError(f"data equation y = A u_star + eps violated by {gap:.3e}")
        return self

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def d(self) -> int:
        return self.A.shape[1]


class ThetaVector(HierBaseModel):
    theta: Vector
    eta: Optional[float] = None

    @model_validator(mode="after")
    def _check_positive(self) -> "ThetaVector":
        if not np.all(self.theta > 0):
            raise ValueError("theta entries must be positive")
        if self.eta is not None and np.any(self.theta < self.eta * (1.0 - 1e-12)):
            raise ValueError("theta entries must be at least eta")
        return self

    def __len__(self) -> int:
        return self.theta.shape[0]


class LinearSolver(str, Enum):
    DIRECT = "direct"
    CONJUGATE_GRADIENT = "conjugate-gradient"


class ThetaInit(str, Enum):
    ONES = "ones"
    ETA_FLOOR = "eta-floor"


class SolverConfig(HierBaseModel):
    max_iters: int = Field(SOLVER_MAX_ITERS, ge=1)
    tol_u: float = Field(SOLVER_TOL_U, gt=0)
    tol_grad: float = Field(SOLVER_TOL_GRAD, gt=0)
    linear_solver: LinearSolver = LinearSolver.DIRECT
    cg_tol: float = Field(CG_TOL, gt=0)
    cg_max_iters: int = Field(CG_MAX_ITERS, ge=1)
    theta_init: ThetaInit = ThetaInit.ONES
    strict: bool = False

    class Config:
        extra = "forbid"


class IterationRecord(HierBaseModel):
    iteration: int
    J: float
    F: float
    step_norm: float
    grad_inf_norm: float
    mahalanobis_error: Optional[float] = None


class ConvergenceTrace(HierBaseModel):
    records: List[IterationRecord] = []
    iterates: List[Vector] = Field(default_factory=list, exclude=True)
    u_hat: Optional[Vector] = None
    theta_hat: Optional[Vector] = None
    hypermodel: Optional[Hypermodel] = Field(None, exclude=True)
    converged: bool = False

    @property
    def iterations(self) -> int:
        return len(self.records)


class TruthKind(str, Enum):
    HARD_SPARSE = "hard-sparse"
    LQ_BALL = "lq-ball"
    GROUP_SPARSE = "group-sparse"
    FRAME_COMPRESSIBLE = "frame-compressible"


class TruthSpec(HierBaseModel):
    kind: TruthKind
    s: Optional[int] = Field(None, ge=0)
    amplitude: float = Field(1.0, gt=0)
    q: Optional[float] = None
    radius: Optional[float] = Field(None, alias="R_q", gt=0)
    margin: float = Field(LQ_DECAY_MARGIN, ge=0)
    seed: int = 0

    @model_validator(mode="after")
    def _check_kind(self) -> "TruthSpec":
        if self.kind == TruthKind.LQ_BALL:
            if self.q is None or not 0.0 < self.q < 1.0:
                raise ValueError("lq-ball truths need 0 < q < 1")
            if self.radius is None:
                raise ValueError("lq-ball truths need R_q > 0")
        elif self.s is None:
            raise ValueError(f"{self.kind.value} truths need a sparsity level s")
        return self

    @property
    def sparsity(self) -> float:
        """s for the sparse kinds, R_q for lq-ball."""
        return float(self.radius) if self.kind == TruthKind.LQ_BALL else float(self.s)


class DesignSpec(HierBaseModel):
    kind: str = "identity"
    rho: float = 0.0

    @model_validator(mode="before")
    @classmethod
    def _parse_text(cls, data: Any) -> Any:
        if isinstance(data, str):
            text = data.strip().lower()
            if text == "identity":
                return {"kind": "identity"}
            if text.startswith("ar1(") and text.endswith(")"):
                return {"kind": "ar1", "rho": float(text[4:-1])}
            raise ValueError(f"unknown design {data!r}; expected identity or ar1(rho)")
        return data

    @model_validator(mode="after")
    def _check_rho(self) -> "DesignSpec":
        if self.kind not in ("identity", "ar1"):
            raise ValueError(f"unknown design kind {self.kind!r}")
        if not abs(self.rho) < 1.0:
            raise ValueError("ar1 correlation must satisfy |rho| < 1")
        return self

    def __str__(self) -> str:
        return "identity" if self.kind == "identity" else f"ar1({self.rho:g})"


class ModelSubspace(HierBaseModel):
    """Index set S defining M(S) and its orthogonal complement."""
    variant: Variant
    support: List[int]
    d: int
    groups: Optional[GroupStructure] = None
    frame: Optional[TightFrame] = None

    @model_validator(mode="after")
    def _check_support(self) -> "ModelSubspace":
        self.support = sorted(set(int(i) for i in self.support))
        if self.variant == Variant.GROUP and self.groups is None:
            raise ValueError("a group subspace needs the group structure")
        if self.variant == Variant.FRAME and self.frame is None:
            raise ValueError("a frame subspace needs the frame")
        if self.support and not 0 <= self.support[0] <= self.support[-1] < self.index_count:
            raise ValueError(f"support indices must lie in 0..{self.index_count - 1}")
        return self

    @property
    def index_count(self) -> int:
        if self.variant == Variant.GROUP:
            return self.groups.k
        if self.variant == Variant.FRAME:
            return self.frame.k
        return self.d

    @property
    def size(self) -> int:
        return len(self.support)

    @cached_property
    def mask(self) -> np.ndarray:
        """Coordinates kept by the projection onto M (coordinate and group variants)."""
        keep = np.zeros(self.d, dtype=bool)
        if self.variant == Variant.GROUP:
            for j in self.support:
                keep[self.groups.index_arrays[j]] = True
        else:
            keep[self.support] = True
        return keep

    @cached_property
    def basis(self) -> np.ndarray:
        """Orthonormal basis of M(S_W) = {u : (Wᵀu)_j = 0 for j outside S}."""
        outside = np.setdiff1d(np.arange(self.frame.k), self.support)
        if outside.size == 0:
            return np.eye(self.d)
        return linalg.null_space(self.frame.W[:, outside].T)


class RscEstimate(HierBaseModel):
    kappa: float = Field(..., ge=0)
    tau_sq: float = Field(..., ge=0)
    n_samples: int = Field(..., ge=1)
    min_margin: float

    @property
    def usable(self) -> bool:
        return self.kappa > 0


class RadiusResult(HierBaseModel):
    """Explicit error radius together with its hypothesis checks."""
    delta: float
    psi: float
    kappa: float
    tau_sq: float
    lam: float = Field(..., alias="lambda")
    lambda_threshold: Optional[float] = None
    rsc_ok: bool
    lambda_ok: bool

    @property
    def hypotheses_ok(self) -> bool:
        return self.rsc_ok and self.lambda_ok


class RhsBreakdown(HierBaseModel):
    estimation: float
    approximation: float
    eta_term: float

    @property
    def total(self) -> float:
        return self.estimation + self.approximation + self.eta_term


class BoundKind(str, Enum):
    HARD = "hard"
    LQ = "lq"
    GROUP = "group"
    FRAME = "frame"


class RhsParams(HierBaseModel):
    """Inputs of the constant-free error bounds; `m` is d or k."""
    lam: float = Field(..., alias="lambda", gt=0)
    kappa: float = Field(..., gt=0)
    tau_sq: float = Field(0.0, ge=0)
    eta: float = Field(..., gt=0)
    m: int = Field(..., ge=1)
    n: Optional[int] = Field(None, ge=1)
    s: Optional[float] = Field(None, ge=0)
    q: Optional[float] = None
    radius: Optional[float] = Field(None, alias="R_q", gt=0)
    delta: Optional[float] = Field(None, gt=0)
    head: Optional[float] = Field(None, ge=0)
    p_max: Optional[int] = Field(None, ge=1)


class StepRule(str, Enum):
    FIXED = "fixed"
    BACKTRACKING = "backtracking"


class ProxConfig(HierBaseModel):
    step_rule: StepRule = StepRule.FIXED
    max_iters: int = Field(100000, ge=1)
    tol: float = Field(1e-12, gt=0)
    accelerated: bool = True


class LambdaRule(str, Enum):
    EXPLICIT = "explicit"
    COROLLARY = "corollary"


class SweepSpec(HierBaseModel):
    variant: Variant
    n_grid: Annotated[List[int], BeforeValidator(_split_list)] = Field(..., min_length=1)
    d: int = Field(..., ge=1)
    truth: TruthSpec
    sparsity_grid: Optional[Annotated[List[float], BeforeValidator(_split_list)]] = None
    etas: Annotated[List[float], BeforeValidator(_split_list)] = Field(..., min_length=1)
    lambda_rule: LambdaRule = LambdaRule.COROLLARY
    lambda_value: Optional[float] = Field(None, gt=0)
    trials: int = Field(..., ge=1)
    master_seed: int = Field(0, ge=0)
    design: DesignSpec = DesignSpec()
    group_size: Optional[int] = Field(None, ge=1)
    cov_kind: CovKind = CovKind.IDENTITY
    frame_kind: FrameKind = FrameKind.RANDOM_ROWS
    k: Optional[int] = Field(None, ge=1)
    rsc_samples: int = Field(0, ge=0)
    solver: SolverConfig = SolverConfig()

    @field_validator("etas")
    @classmethod
    def _check_etas(cls, values: List[float]) -> List[float]:
        return [check_eta(v) for v in values]

    @model_validator(mode="after")
    def _check_rule(self) -> "SweepSpec":
        if self.lambda_rule == LambdaRule.EXPLICIT and self.lambda_value is None:
            raise ValueError("an explicit lambda rule needs a lambda value")
        if self.variant == Variant.GROUP and self.group_size is None:
            raise ValueError("group sweeps need group_size")
        return self

    @property
    def sparsity_values(self) -> List[float]:
        return list(self.sparsity_grid) if self.sparsity_grid else [self.truth.sparsity]


class TrialRecord(HierBaseModel):
    variant: Variant
    n: int
    d: int
    k: Optional[int] = None
    s_or_Rq: float
    q: Optional[float] = None
    eta: float
    lam: float = Field(..., alias="lambda")
    seed: int
    error_sq: float
    bound_delta: Optional[float] = None
    hypotheses_ok: Optional[bool] = None
    iters: int
    rho_hat: Optional[float] = None
    wall_time_ms: float


class SlopeFit(HierBaseModel):
    slope: float
    ci_low: float
    ci_high: float
    intercept: float = 0.0
    points: int = 0
    eta: Optional[float] = None
    s_or_Rq: Optional[float] = None


class CellReport(HierBaseModel):
    n: int
    eta: float
    s_or_Rq: float
    median_error_sq: Optional[float] = None
    q25: Optional[float] = None
    q75: Optional[float] = None
    theory: Optional[float] = None
    trials: List[TrialRecord] = []
    failures: List[str] = []

    @property
    def completed(self) -> bool:
        return not self.failures


class ExperimentReport(HierBaseModel):
    spec: Dict[str, Any]
    cells: List[CellReport] = []
    fits: Optional[SlopeFit] = None
    series_fits: List[SlopeFit] = []

    @property
    def completed(self) -> bool:
        return all(cell.completed for cell in self.cells)


class RatesReport(HierBaseModel):
    trials: List[TrialRecord] = []
    hypothesis_fraction: float = 0.0
    violations: int = 0
    kappas: List[float] = []


class SolveReport(HierBaseModel):
    variant: Variant
    n: int
    d: int
    eta: float
    lam: float = Field(..., alias="lambda")
    seed: Optional[int] = None
    converged: bool
    iterations: int
    J: float
    F: float
    grad_inf_norm: float
    rho_hat: Optional[float] = None
    error_sq: Optional[float] = None
    lambda_threshold: Optional[float] = None
    column_normalized: bool = False
    block_normalized: bool = False
    frame_normalized: bool = False
    wall_time_ms: float = 0.0


class SuiteResult(HierBaseModel):
    suite: str
    cases: int
    passed: int
    failed: int
    reproducer: Optional[Dict[str, Any]] = None

    @property
    def ok(self) -> bool:
        return self.failed == 0

    def raise_for_violation(self) -> None:
        if not self.ok:
            raise PropertyViolation(f"{self.suite}: {self.failed} of {self.cases} cases failed",
                                    suite=self.suite, reproducer=self.reproducer)
