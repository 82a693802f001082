SOLVER_MAX_ITERS = 10000
SOLVER_TOL_U = 1e-10
SOLVER_TOL_GRAD = 1e-8
CG_TOL = 1e-12
CG_MAX_ITERS = 5000

ETA_UPPER = 0.5
TIGHT_FRAME_TOL = 1e-10
PROJECTOR_TOL = 1e-9
NORMALIZATION_RTOL = 1e-8
LQ_DECAY_MARGIN = 0.05

RSC_GAUSSIAN_SAMPLES = 10000
RSC_TAU_SQ_FACTOR = 9.0

FD_STEP = 1e-6
GRID_POINTS = 201
GRID_RESOLUTION = 1e-3

MIN_FIT_POINTS = 4
FIT_CONFIDENCE = 0.95

HMX1_MAGIC = b"HMX1"
THREADS_ENV = "HIERMAP_THREADS"

EXIT_OK = 0
EXIT_CONFIG_ERROR = 1
EXIT_NOT_CONVERGED = 2
EXIT_VIOLATION = 3

TRACE_COLUMNS = ("iter", "J", "F", "step_norm", "grad_inf_norm")
TRACE_ERROR_COLUMN = "mahalanobis_error"
TRIAL_COLUMNS = (
    "variant", "n", "d", "k", "s_or_Rq", "q", "eta", "lambda", "seed",
    "error_sq", "bound_delta", "hypotheses_ok", "iters", "rho_hat", "wall_time_ms",
)
PLOT_COLUMNS = ("eta", "s_or_Rq", "n", "median_error_sq", "q25", "q75", "theory")
