"""Monte-Carlo rate reproductions. Run with `pytest -m slow`; each takes minutes."""
import pytest

from py_hiermap import Bench
from py_hiermap.config import RatesConfig
from py_hiermap.models import SweepSpec

pytestmark = pytest.mark.slow

N_GRID = [128, 256, 512, 1024, 2048]


def _sweep(**fields) -> SweepSpec:
    base = dict(variant="coordinate", n_grid=N_GRID, d=256, etas=[1e-5], trials=20, master_seed=1)
    base.update(fields)
    return SweepSpec(**base)


def test_hard_sparse_slope():
    spec = _sweep(truth={"kind": "hard-sparse", "s": 4, "amplitude": 5.0})
    with Bench() as bench:
        report = bench.sweeps.run(spec)
    assert report.completed
    assert -1.25 <= report.fits.slope <= -0.75


def test_doubling_sparsity_doubles_error():
    spec = _sweep(n_grid=[1024], truth={"kind": "hard-sparse", "s": 4, "amplitude": 5.0}, sparsity_grid=[4, 8])
    with Bench() as bench:
        report = bench.sweeps.run(spec)
    by_s = {cell.s_or_Rq: cell.median_error_sq for cell in report.cells}
    assert 1.5 <= by_s[8.0] / by_s[4.0] <= 2.7


def test_lq_slope():
    spec = _sweep(truth={"kind": "lq-ball", "q": 0.5, "R_q": 4.0})
    with Bench() as bench:
        report = bench.sweeps.run(spec)
    assert -0.95 <= report.fits.slope <= -0.55


def test_group_sparse_slope():
    spec = _sweep(variant="group", group_size=4, truth={"kind": "group-sparse", "s": 3, "amplitude": 5.0})
    with Bench() as bench:
        report = bench.sweeps.run(spec)
    assert report.completed
    assert -1.25 <= report.fits.slope <= -0.75


def test_certified_radius_holds():
    cfg = RatesConfig.model_validate({
        "n": 100000, "d": 16, "eta": 1e-4, "trials": 10, "master_seed": 3,
        "truth": {"kind": "hard-sparse", "s": 1, "amplitude": 1.0},
    })
    with Bench() as bench:
        report = bench.rates.run(cfg)
    assert report.hypothesis_fraction > 0.0
    assert report.violations == 0
