import json

import pytest

from py_hiermap.checks import SUITES
from py_hiermap.cli import build_parser, main

SOLVE_INI = """
[problem]
n = 40
d = 10
seed = 1

[truth]
kind = hard-sparse
s = 2

[model]
eta = 0.01
"""

SWEEP_INI = """
[sweep]
variant = coordinate
n_grid = 32, 64, 128, 256
d = 8
etas = 1e-3
trials = 2

[truth]
kind = hard-sparse
s = 1
"""


def _write(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def test_solve_command(tmp_path, capsys):
    config = _write(tmp_path, "solve.ini", SOLVE_INI)
    assert main(["solve", "--config", config, "--out", str(tmp_path / "out"), "--threads", "1"]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["converged"]
    assert "lambda" in report
    assert (tmp_path / "out" / "u_hat.csv").exists()


def test_solve_reports_config_errors(tmp_path, capsys):
    config = _write(tmp_path, "solve.ini", SOLVE_INI.replace("eta = 0.01", "eta = 0.7"))
    assert main(["solve", "--config", config, "--out", str(tmp_path)]) == 1
    err = capsys.readouterr().err
    assert "model.eta" in err
    assert "(0, 1/2)" in err


def test_solve_reports_non_convergence(tmp_path):
    config = _write(tmp_path, "solve.ini", SOLVE_INI + "\n[solver]\nmax_iters = 2\n")
    assert main(["solve", "--config", config, "--out", str(tmp_path / "out")]) == 2


def test_check_command(capsys):
    assert main(["check", "--suite", "theta", "--cases", "20", "--threads", "1"]) == 0
    assert "theta: 20 passed, 0 failed of 20" in capsys.readouterr().out


def test_check_command_reports_violation(monkeypatch, capsys):
    monkeypatch.setitem(SUITES, "theta", (lambda i, seed, env: {"u": 1.0}, 3))
    assert main(["check", "--suite", "theta", "--seed", "4"]) == 3
    out = capsys.readouterr().out
    assert "reproducer:" in out
    assert '"master_seed": 4' in out


def test_sweep_and_report_commands(tmp_path, capsys):
    config = _write(tmp_path, "sweep.ini", SWEEP_INI)
    out = tmp_path / "sweep"
    assert main(["sweep", "--config", config, "--out", str(out), "--threads", "2"]) == 0
    assert "cells completed: 4/4" in capsys.readouterr().out
    assert main(["report", str(out / "report.json")]) == 0
    assert "slope" in capsys.readouterr().out


def test_report_detects_truncated_trials(tmp_path):
    config = _write(tmp_path, "sweep.ini", SWEEP_INI)
    out = tmp_path / "sweep"
    assert main(["sweep", "--config", config, "--out", str(out)]) == 0
    lines = (out / "trials.csv").read_text().splitlines()
    (out / "trials.csv").write_text("\n".join(lines[:-1]) + "\n")
    assert main(["report", str(out / "report.json")]) == 1


def test_report_missing_file(tmp_path):
    assert main(["report", str(tmp_path / "report.json")]) == 1


def test_parser_rejects_unknown_suite():
    with pytest.raises(SystemExit):
        build_parser().parse_args(["check", "--suite", "monotone"])
