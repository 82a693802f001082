import numpy as np
import pytest

from py_hiermap.constants import TRACE_COLUMNS
from py_hiermap.exceptions import DimensionError, NotConvergedError, ValidationError
from py_hiermap.hypermodel import f_map, gradient_F, objective_J
from py_hiermap.models import GroupStructure, Hypermodel, Problem, SolverConfig, TightFrame, TruthSpec
from py_hiermap.oracle import grid_minimize_F
from py_hiermap.solver import (
    _group_unscale,
    _scaling,
    linear_rate_estimate,
    mahalanobis_norm,
    normal_residual,
    solve,
    solve_path,
    trace_to_rows,
    u_update,
)
from py_hiermap.synth import make_problem
from py_hiermap.theory import lambda_rule


def test_u_update_solves_normal_equations(any_model, small_problem, rng):
    theta = np.exp(rng.normal(0.0, 1.0, any_model.m))
    u = u_update(theta, small_problem, any_model)
    assert normal_residual(u, theta, small_problem, any_model) <= 1e-10


def test_u_update_minimizes_j(any_model, small_problem, rng):
    theta = np.exp(rng.normal(0.0, 1.0, any_model.m))
    u = u_update(theta, small_problem, any_model)
    best = objective_J(u, theta, small_problem, any_model)
    for _ in range(10):
        assert objective_J(u + 1e-3 * rng.standard_normal(u.shape), theta, small_problem, any_model) >= best


def test_conjugate_gradient_matches_direct(any_model, small_problem, rng):
    theta = np.exp(rng.normal(0.0, 1.0, any_model.m))
    direct = u_update(theta, small_problem, any_model)
    iterative = u_update(theta, small_problem, any_model, SolverConfig(linear_solver="conjugate-gradient"))
    np.testing.assert_allclose(iterative, direct, rtol=1e-8, atol=1e-10)


def test_u_update_rejects_wrong_theta_length(coord_model, small_problem):
    with pytest.raises(DimensionError):
        u_update(np.ones(4), small_problem, coord_model)
    with pytest.raises(ValidationError):
        u_update(np.zeros(6), small_problem, coord_model)


def test_solve_reaches_stationarity(any_model, small_problem):
    u_hat, theta_hat, trace = solve(small_problem, any_model)
    assert trace.converged
    assert np.abs(gradient_F(u_hat, small_problem, any_model)).max() <= 1e-8
    np.testing.assert_allclose(theta_hat.theta, f_map(u_hat, any_model).theta, rtol=1e-10)
    J = np.array([r.J for r in trace.records])
    assert np.all(np.diff(J) <= 1e-12 * np.abs(J[1:]))


def test_solve_with_conjugate_gradient(frame_model, small_problem):
    u_direct, _, _ = solve(small_problem, frame_model)
    u_cg, _, trace = solve(small_problem, frame_model, SolverConfig(linear_solver="conjugate-gradient"))
    assert trace.converged
    np.testing.assert_allclose(u_cg, u_direct, atol=1e-8)



def test_group_warm_start_handles_unordered_groups(rng):
    covariances = [np.array([[2.0, 0.3], [0.3, 1.0]]), np.eye(1), np.array([[1.5, -0.4], [-0.4, 0.8]])]
    groups = GroupStructure(groups=[[3, 0], [4], [2, 1]], covariances=covariances)
    hm = Hypermodel(variant="group", eta=0.1, lam=0.5, groups=groups)
    theta = np.array([0.5, 2.0, 1.3])
    u = rng.standard_normal(5)
    np.testing.assert_allclose(_scaling(theta, hm, 5) @ _group_unscale(u, theta, hm), u, atol=1e-12)

    A = rng.standard_normal((9, 5))
    p = Problem(A=A, y=rng.standard_normal(9))
    u_direct, _, _ = solve(p, hm)
    u_cg, _, _ = solve(p, hm, SolverConfig(linear_solver="conjugate-gradient"))
    np.testing.assert_allclose(u_cg, u_direct, atol=1e-8)


def test_reduced_models_solve_like_coordinate(small_problem):
    cfg = SolverConfig(tol_u=1e-12, tol_grad=1e-10)
    coord = Hypermodel(variant="coordinate", eta=0.1, lam=0.5, d=6)
    singletons = Hypermodel(variant="group", eta=0.1, lam=0.5,
                            groups=GroupStructure(groups=[[i] for i in range(6)]))
    square = Hypermodel(variant="frame", eta=0.1, lam=0.5, frame=TightFrame(W=np.eye(6)))

    u_ref, theta_ref, _ = solve(small_problem, coord, cfg)
    for hm in (singletons, square):
        u_hat, theta_hat, _ = solve(small_problem, hm, cfg)
        np.testing.assert_allclose(u_hat, u_ref, atol=1e-8)
        np.testing.assert_allclose(theta_hat.theta, theta_ref.theta, atol=1e-8)

def test_solve_is_independent_of_theta_start(coord_model, small_problem):
    u_ones, _, _ = solve(small_problem, coord_model)
    u_floor, _, _ = solve(small_problem, coord_model, SolverConfig(theta_init="eta-floor"))
    np.testing.assert_allclose(u_floor, u_ones, atol=1e-8)


def test_strict_solve_raises_when_capped(coord_model, small_problem):
    with pytest.raises(NotConvergedError) as info:
        solve(small_problem, coord_model, SolverConfig(max_iters=2, strict=True))
    assert info.value.iterations == 2


def test_capped_solve_reports_without_raising(coord_model, small_problem):
    _, _, trace = solve(small_problem, coord_model, SolverConfig(max_iters=2))
    assert not trace.converged
    assert trace.iterations == 2


def test_solve_checks_dimensions(small_problem):
    hm = Hypermodel(variant="coordinate", eta=0.1, lam=1.0, d=4)
    with pytest.raises(DimensionError):
        solve(small_problem, hm)


def test_solve_matches_grid_oracle(rng):
    for _ in range(20):
        d = int(rng.integers(1, 3))
        A = rng.standard_normal((5, d))
        p = Problem(A=A, y=A @ rng.uniform(-2.0, 2.0, d) + 0.3 * rng.standard_normal(5))
        eta = float(np.exp(rng.uniform(np.log(1e-3), np.log(0.4))))
        hm = Hypermodel(variant="coordinate", eta=eta, lam=float(rng.uniform(0.1, 1.0)), d=d)
        u_hat, _, _ = solve(p, hm)
        np.testing.assert_allclose(u_hat, grid_minimize_F(p, hm), atol=1e-3)


def test_solve_path_warm_starts(coord_model, small_problem):
    results = solve_path(small_problem, coord_model, [0.1, 1e-2, 1e-3])
    assert [r[1].eta for r in results] == [0.1, 1e-2, 1e-3]
    assert all(trace.converged for _, _, trace in results)
    cold, _, _ = solve(small_problem, coord_model.model_copy(update={"eta": 1e-3}))
    np.testing.assert_allclose(results[-1][0], cold, atol=1e-7)


def test_mahalanobis_norm(coord_model):
    v = np.array([1.0, 2.0, 0.0, 0.0, 0.0, 0.0])
    theta = np.array([1.0, 4.0, 1.0, 1.0, 1.0, 1.0])
    assert mahalanobis_norm(v, theta, coord_model) == pytest.approx(np.sqrt(2.0))


def test_linear_rate_on_random_problems():
    d, n = 32, 64
    for seed in range(20):
        hm = Hypermodel(variant="coordinate", eta=0.1, lam=lambda_rule("coordinate", n, d), d=d)
        p = make_problem(n, d, "identity", TruthSpec(kind="hard-sparse", s=4, amplitude=2.0), hm, seed)
        _, _, trace = solve(p, hm)
        rho, ratios = linear_rate_estimate(trace)
        assert ratios
        assert all(r < 1.0 for r in ratios)
        assert 0.0 < rho < 1.0
        half = len(ratios) // 2
        if half >= 2:
            assert abs(np.median(ratios[:half]) - np.median(ratios[half:])) <= 0.1
        assert trace.records[0].mahalanobis_error is not None


def test_linear_rate_needs_ten_iterates(coord_model, small_problem):
    _, _, trace = solve(small_problem, coord_model, SolverConfig(max_iters=5))
    with pytest.raises(ValidationError):
        linear_rate_estimate(trace)


def test_trace_rows_follow_column_order(coord_model, small_problem):
    _, _, trace = solve(small_problem, coord_model)
    rows = trace_to_rows(trace)
    assert len(rows) == trace.iterations
    assert tuple(rows[0]) == TRACE_COLUMNS
    assert rows[0]["iter"] == 1
