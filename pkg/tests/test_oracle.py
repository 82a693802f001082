import numpy as np
import pytest

from py_hiermap.exceptions import ValidationError
from py_hiermap.frames import make_groups
from py_hiermap.hypermodel import theta_closed_form
from py_hiermap.models import Hypermodel, Problem, ProxConfig, TruthSpec
from py_hiermap.oracle import (
    finite_diff_grad,
    golden_section_theta,
    grid_minimize_F,
    group_soft_threshold,
    lasso_duality_gap,
    prox_l1_solve,
    soft_threshold,
)
from py_hiermap.solver import solve
from py_hiermap.synth import make_problem
from py_hiermap.theory import lambda_rule


def test_finite_diff_grad_of_quadratic():
    Q = np.array([[2.0, 0.5], [0.5, 1.0]])
    u = np.array([0.3, -1.2])
    np.testing.assert_allclose(finite_diff_grad(lambda x: 0.5 * x @ Q @ x, u), Q @ u, atol=1e-8)
    with pytest.raises(ValidationError):
        finite_diff_grad(lambda x: 0.0, u, h=0.0)


@pytest.mark.parametrize("u_val", [0.0, 1e-6, 0.3, -1.0, 5.0, 100.0])
@pytest.mark.parametrize("eta", [1e-8, 1e-3, 0.1, 0.45])
def test_golden_section_matches_closed_form(u_val, eta):
    assert golden_section_theta(u_val, eta) == pytest.approx(float(theta_closed_form(u_val, eta)), abs=1e-6)


def test_grid_minimizer_limits_dimension(small_problem, coord_model):
    with pytest.raises(ValidationError):
        grid_minimize_F(small_problem, coord_model)


def test_soft_threshold():
    np.testing.assert_array_equal(soft_threshold([3.0, -0.5, -2.0, 1.0], 1.0), [2.0, 0.0, -1.0, 0.0])


def test_group_soft_threshold():
    groups = make_groups(3, [2, 1], "identity", seed=0)
    out = group_soft_threshold([3.0, 4.0, 0.5], groups, 1.0)
    np.testing.assert_allclose(out, [2.4, 3.2, 0.0])


def test_prox_solver_on_orthogonal_design(rng):
    n = 16
    A = np.sqrt(n) * np.eye(n)
    y = 2.0 * rng.standard_normal(n)
    p = Problem(A=A, y=y)
    expected = soft_threshold(y / np.sqrt(n), 0.3)
    np.testing.assert_allclose(prox_l1_solve(p, 0.3), expected, atol=1e-10)


def test_prox_solver_returns_zero_above_null_threshold(small_problem):
    lam = np.abs(small_problem.A.T @ small_problem.y).max() / small_problem.n
    np.testing.assert_array_equal(prox_l1_solve(small_problem, 1.01 * lam), np.zeros(small_problem.d))


@pytest.mark.parametrize("cfg", [
    ProxConfig(),
    ProxConfig(step_rule="backtracking"),
    ProxConfig(accelerated=False),
])
def test_prox_solver_closes_duality_gap(small_problem, cfg):
    u = prox_l1_solve(small_problem, 0.2, cfg)
    assert lasso_duality_gap(small_problem, 0.2, u) <= 1e-8
    assert lasso_duality_gap(small_problem, 0.2, np.zeros(small_problem.d)) > 1e-3


def test_prox_solver_refuses_unsupported_models(small_problem, frame_model, group_model):
    with pytest.raises(ValidationError):
        prox_l1_solve(small_problem, 0.1, hm=frame_model)
    with pytest.raises(ValidationError):
        prox_l1_solve(small_problem, 0.1, hm=group_model)
    with pytest.raises(ValidationError):
        prox_l1_solve(small_problem, 0.0)


def test_group_lasso_stationarity(small_problem):
    groups = make_groups(6, [2, 2, 2], "identity", seed=0)
    hm = Hypermodel(variant="group", eta=0.1, lam=0.3, groups=groups)
    u = prox_l1_solve(small_problem, 0.3, hm=hm)
    grad = small_problem.A.T @ (small_problem.A @ u - small_problem.y) / small_problem.n
    for idx in groups.index_arrays:
        block = u[idx]
        if np.linalg.norm(block) > 0:
            np.testing.assert_allclose(-grad[idx], 0.3 * block / np.linalg.norm(block), atol=1e-8)
        else:
            assert np.linalg.norm(grad[idx]) <= 0.3 + 1e-8


def test_map_estimate_approaches_lasso():
    d, n = 32, 64
    lam = lambda_rule("coordinate", n, d)
    for seed in range(5):
        hm = Hypermodel(variant="coordinate", eta=1e-2, lam=lam, d=d)
        p = make_problem(n, d, "identity", TruthSpec(kind="hard-sparse", s=4, amplitude=2.0), hm, seed)
        lasso = prox_l1_solve(p, lam)
        gaps = []
        for eta in (1e-2, 1e-4, 1e-6, 1e-8):
            u_hat, _, _ = solve(p, hm.model_copy(update={"eta": eta}))
            gaps.append(np.linalg.norm(u_hat - lasso))
        assert all(a > b for a, b in zip(gaps, gaps[1:]))
        assert gaps[-1] <= 1e-2 * np.linalg.norm(lasso)
