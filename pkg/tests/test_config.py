from pathlib import Path

import pytest

from py_hiermap.config import load_rates_config, load_run_config, load_sweep_spec, read_sections
from py_hiermap.exceptions import ConfigError

SOLVE_INI = """
[problem]
n = 64
d = 16
design = ar1(0.5)   ; correlated columns
seed = 3

[truth]
kind = hard-sparse
s = 2
amplitude = 1.5

[model]
variant = coordinate
eta = 1e-3
lambda = 0.3

[solver]
max_iters = 500
linear_solver = conjugate-gradient

[output]
dir = out/solve
"""

SWEEP_INI = """
[sweep]
variant = group
n_grid = 128, 256, 512
d = 32
etas = 1e-4
trials = 3
master_seed = 2

[truth]
kind = group-sparse
s = 2

[groups]
size = 4
cov = random
"""

RATES_INI = """
[rates]
n = 1000
d = 16
eta = 1e-4
trials = 2
lambda_scale = 1.5

[truth]
kind = lq-ball
q = 0.5
R_q = 2.0

[rsc]
samples = 2000
cone_samples = 100
"""


def _write(tmp_path: Path, text: str) -> Path:
    path = tmp_path / "run.ini"
    path.write_text(text)
    return path


def test_load_run_config(tmp_path):
    cfg = load_run_config(_write(tmp_path, SOLVE_INI))
    assert (cfg.problem.n, cfg.problem.d, cfg.problem.seed) == (64, 16, 3)
    assert cfg.problem.design.rho == 0.5
    assert cfg.truth.s == 2
    assert cfg.model.eta == 1e-3
    assert cfg.model.lam == 0.3
    assert cfg.solver.max_iters == 500
    assert cfg.solver.linear_solver == "conjugate-gradient"
    assert cfg.output.dir == Path("out/solve")


def test_eta_outside_range_names_the_key(tmp_path):
    with pytest.raises(ConfigError, match=r"\(0, 1/2\)") as info:
        load_run_config(_write(tmp_path, SOLVE_INI.replace("eta = 1e-3", "eta = 0.7")))
    assert info.value.key == "model.eta"


def test_unknown_key(tmp_path):
    with pytest.raises(ConfigError) as info:
        load_run_config(_write(tmp_path, SOLVE_INI.replace("seed = 3", "seed = 3\nsede = 4")))
    assert info.value.key == "problem.sede"


def test_unknown_section(tmp_path):
    with pytest.raises(ConfigError) as info:
        load_run_config(_write(tmp_path, SOLVE_INI + "\n[plots]\nwidth = 3\n"))
    assert info.value.key == "plots"


def test_missing_file_and_truth(tmp_path):
    with pytest.raises(ConfigError):
        load_run_config(tmp_path / "missing.ini")
    without_truth = SOLVE_INI.replace("[truth]\nkind = hard-sparse\ns = 2\namplitude = 1.5\n", "")
    with pytest.raises(ConfigError):
        load_run_config(_write(tmp_path, without_truth))


def test_data_directory_replaces_truth(tmp_path):
    text = "[problem]\ndata = saved\n\n[model]\neta = 0.01\n"
    cfg = load_run_config(_write(tmp_path, text))
    assert cfg.problem.data == Path("saved")
    assert cfg.truth is None


def test_group_model_needs_group_size(tmp_path):
    text = SOLVE_INI.replace("variant = coordinate", "variant = group")
    with pytest.raises(ConfigError):
        load_run_config(_write(tmp_path, text))
    cfg = load_run_config(_write(tmp_path, text + "\n[groups]\nsize = 4\n"))
    assert cfg.model.group_size == 4


def test_load_sweep_spec(tmp_path):
    spec = load_sweep_spec(_write(tmp_path, SWEEP_INI))
    assert spec.n_grid == [128, 256, 512]
    assert spec.group_size == 4
    assert spec.cov_kind == "random"
    assert spec.truth.kind == "group-sparse"


def test_sweep_errors_name_their_key(tmp_path):
    with pytest.raises(ConfigError) as info:
        load_sweep_spec(_write(tmp_path, SWEEP_INI.replace("etas = 1e-4", "etas = 1e-4, 0.5")))
    assert info.value.key == "sweep.etas"
    with pytest.raises(ConfigError) as info:
        load_sweep_spec(_write(tmp_path, SWEEP_INI.replace("trials = 3", "trials = 3\nrepeats = 2")))
    assert info.value.key == "sweep.repeats"
    with pytest.raises(ConfigError) as info:
        load_sweep_spec(_write(tmp_path, SWEEP_INI.replace("size = 4", "size = 0")))
    assert info.value.key == "groups.size"


def test_load_rates_config(tmp_path):
    cfg = load_rates_config(_write(tmp_path, RATES_INI))
    assert cfg.truth.radius == 2.0
    assert cfg.rsc_samples == 2000
    assert cfg.cone_samples == 100
    assert cfg.lambda_scale == 1.5
    assert cfg.tau_sq_factor == 9.0


def test_rates_config_locates_rsc_keys(tmp_path):
    with pytest.raises(ConfigError) as info:
        load_rates_config(_write(tmp_path, RATES_INI.replace("samples = 2000", "samples = 0")))
    assert info.value.key == "rsc.samples"


def test_read_sections_keeps_case(tmp_path):
    sections = read_sections(_write(tmp_path, "[truth]\nR_q = 4  # radius\n"))
    assert sections == {"truth": {"R_q": "4"}}
