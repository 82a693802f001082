import numpy as np
import pytest

from py_hiermap.exceptions import ValidationError
from py_hiermap.hypermodel import local_radii
from py_hiermap.models import Hypermodel, Problem, TruthSpec
from py_hiermap.synth import (
    derive_seed,
    exact_support,
    gaussian_design,
    lq_membership,
    make_problem,
    make_truth,
    normalization_flags,
    normalize,
    threshold_support,
)


def test_derive_seed_is_reproducible_and_distinct():
    assert derive_seed(7, 1, 2) == derive_seed(7, 1, 2)
    seeds = {derive_seed(7, 1, n) for n in range(100)}
    assert len(seeds) == 100
    assert derive_seed(7, 1) != derive_seed(8, 1)


def test_identity_design_has_unit_covariance():
    A = gaussian_design(20000, 4, "identity", seed=3)
    np.testing.assert_allclose(A.T @ A / 20000, np.eye(4), atol=0.05)


def test_ar1_design_correlation():
    A = gaussian_design(100000, 3, "ar1(0.5)", seed=11)
    assert np.corrcoef(A[:, 0], A[:, 2])[0, 1] == pytest.approx(0.25, abs=0.03)


def test_design_is_deterministic():
    np.testing.assert_array_equal(gaussian_design(5, 3, seed=2), gaussian_design(5, 3, seed=2))


def test_design_rejects_bad_input():
    with pytest.raises(ValidationError):
        gaussian_design(0, 3)
    with pytest.raises(ValidationError):
        gaussian_design(4, 3, "toeplitz")


def test_normalize_columns(coord_model, small_problem):
    p = normalize(small_problem, coord_model)
    np.testing.assert_allclose(np.linalg.norm(p.A, axis=0) / np.sqrt(p.n), 1.0, rtol=1e-12)
    assert p.column_normalized
    np.testing.assert_allclose(p.A @ p.u_star + p.eps, p.y, rtol=1e-12)
    np.testing.assert_allclose(p.A @ p.u_star, small_problem.A @ small_problem.u_star, rtol=1e-10)


def test_normalize_is_idempotent(any_model, small_problem):
    once = normalize(small_problem, any_model)
    twice = normalize(once, any_model)
    np.testing.assert_allclose(twice.A, once.A, rtol=1e-12)
    np.testing.assert_allclose(twice.u_star, once.u_star, rtol=1e-12)


def test_normalize_blocks_and_frames(group_model, frame_model, small_problem):
    assert normalize(small_problem, group_model).block_normalized
    p = normalize(small_problem, frame_model)
    composite = np.linalg.norm(p.A @ frame_model.frame.W, axis=0) / np.sqrt(p.n)
    assert composite.max() == pytest.approx(1.0, rel=1e-12)


def test_normalize_rejects_zero_column(coord_model):
    A = np.ones((12, 6))
    A[:, 2] = 0.0
    with pytest.raises(ValidationError):
        normalize(Problem(A=A, y=np.ones(12)), coord_model)


def test_normalization_flags_on_raw_design():
    flags = normalization_flags(np.ones((4, 2)))
    assert flags == {"column_normalized": False, "block_normalized": False, "frame_normalized": False}


def test_hard_sparse_truth():
    u = make_truth(20, TruthSpec(kind="hard-sparse", s=3, amplitude=2.5, seed=4))
    assert np.count_nonzero(u) == 3
    np.testing.assert_allclose(np.abs(u[u != 0]), 2.5)
    with pytest.raises(ValidationError):
        make_truth(2, TruthSpec(kind="hard-sparse", s=3))


def test_group_sparse_truth(group_model):
    u = make_truth(6, TruthSpec(kind="group-sparse", s=2, amplitude=1.5, seed=1), groups=group_model.groups)
    radii = local_radii(u, group_model)
    assert np.count_nonzero(radii) == 2
    np.testing.assert_allclose(radii[radii > 0], 1.5, rtol=1e-12)
    with pytest.raises(ValidationError):
        make_truth(6, TruthSpec(kind="group-sparse", s=2))


def test_frame_compressible_truth(frame_model):
    u = make_truth(6, TruthSpec(kind="frame-compressible", s=2, seed=3), frame=frame_model.frame)
    assert u.shape == (6,)
    assert np.linalg.norm(u) > 0


def test_lq_membership_value():
    u = np.array([1.0, 0.5, 0.25])
    assert lq_membership(u, 0.5) == pytest.approx(2.20710678, abs=1e-7)
    assert lq_membership(u, 0.5) <= 4.0


@pytest.mark.parametrize("q", [0.25, 0.5, 0.75])
def test_lq_truth_lies_on_its_ball(q):
    u = make_truth(128, TruthSpec(kind="lq-ball", q=q, R_q=4.0, seed=9))
    assert lq_membership(u, q) == pytest.approx(4.0, abs=1e-9)


def test_group_lq_truth_follows_group_norms(group_model):
    u = make_truth(6, TruthSpec(kind="lq-ball", q=0.5, R_q=2.0, seed=2), groups=group_model.groups)
    assert lq_membership(local_radii(u, group_model), 0.5) == pytest.approx(2.0, abs=1e-9)


def test_threshold_support_examples():
    hm = Hypermodel(variant="coordinate", eta=0.1, lam=1.0, d=4)
    assert threshold_support([1.0, -0.3, 0.1, 0.0], 0.2, hm).support == [0, 1]
    assert exact_support([1.0, -0.3, 0.1, 0.0], hm).support == [0, 1, 2]
    with pytest.raises(ValidationError):
        threshold_support([1.0, 0.0, 0.0, 0.0], 0.0, hm)


def test_threshold_support_counting_bound():
    hm = Hypermodel(variant="coordinate", eta=0.1, lam=1.0, d=256)
    for seed in range(10):
        u = make_truth(256, TruthSpec(kind="lq-ball", q=0.5, R_q=4.0, seed=seed))
        assert len(threshold_support(u, 0.25, hm).support) <= 8
        for power in range(1, 11):
            delta = 2.0 ** -power
            assert len(threshold_support(u, delta, hm).support) <= 4.0 * delta ** -0.5


def test_make_problem_is_deterministic(coord_model):
    truth = TruthSpec(kind="hard-sparse", s=2)
    first = make_problem(12, 6, "identity", truth, coord_model, seed=21)
    second = make_problem(12, 6, "identity", truth, coord_model, seed=21)
    np.testing.assert_array_equal(first.A, second.A)
    np.testing.assert_array_equal(first.y, second.y)
    other = make_problem(12, 6, "identity", truth, coord_model, seed=22)
    assert not np.array_equal(first.A, other.A)


def test_make_problem_satisfies_data_equation(coord_model):
    p = make_problem(40, 6, "ar1(0.3)", TruthSpec(kind="hard-sparse", s=2), coord_model, seed=5)
    assert p.column_normalized
    np.testing.assert_allclose(p.A @ p.u_star + p.eps, p.y, rtol=1e-12, atol=1e-12)
    raw = make_problem(40, 6, "identity", TruthSpec(kind="hard-sparse", s=2), coord_model, seed=5,
                       normalize_design=False)
    assert raw.scaling is None
