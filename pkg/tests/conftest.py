import numpy as np
import pytest
import pytest_asyncio

from py_hiermap import AsyncBench
from py_hiermap.frames import make_groups, make_tight_frame
from py_hiermap.models import Hypermodel, Problem


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: Monte-Carlo reproductions that take minutes")


@pytest_asyncio.fixture
async def bench(tmp_path):
    async with AsyncBench(threads=2, out_dir=tmp_path) as bench:
        yield bench


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def coord_model():
    return Hypermodel(variant="coordinate", eta=0.1, lam=0.5, d=6)


@pytest.fixture
def group_model():
    groups = make_groups(6, [2, 1, 3], "random", seed=5)
    return Hypermodel(variant="group", eta=0.1, lam=0.5, groups=groups)


@pytest.fixture
def frame_model():
    frame = make_tight_frame(6, "random-rows", seed=5, k=10)
    return Hypermodel(variant="frame", eta=0.1, lam=0.5, frame=frame)


@pytest.fixture(params=["coordinate", "group", "frame"])
def any_model(request, coord_model, group_model, frame_model):
    return {"coordinate": coord_model, "group": group_model, "frame": frame_model}[request.param]


@pytest.fixture
def small_problem(rng):
    A = rng.standard_normal((12, 6))
    u_star = np.array([1.5, 0.0, 0.0, -2.0, 0.0, 0.5])
    eps = 0.1 * rng.standard_normal(12)
    return Problem(A=A, y=A @ u_star + eps, u_star=u_star, eps=eps)
