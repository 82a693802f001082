"""
Flat-file persistence: the HMX1 matrix container, small CSV matrices, the JSON
problem sidecar and the report/trial/plot/trace files written by the CLI.
"""
import csv
import json
import logging
import struct
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Union

import numpy as np

from .constants import HMX1_MAGIC, PLOT_COLUMNS, TRACE_COLUMNS, TRACE_ERROR_COLUMN, TRIAL_COLUMNS
from .exceptions import ValidationError
from .models import CellReport, ConvergenceTrace, ExperimentReport, Problem, TrialRecord
from .solver import trace_to_rows

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

_HEADER = struct.Struct("<QQ")


def write_hmx1(path: PathLike, matrix) -> None:
    """Magic "HMX1", u64 rows, u64 cols, then row-major little-endian float64 values."""
    arr = np.asarray(matrix, dtype=float)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != 2:
        raise ValidationError(f"HMX1 stores 2-D matrices, got shape {arr.shape}")
    with open(path, "wb") as f:
        f.write(HMX1_MAGIC)
        f.write(_HEADER.pack(*arr.shape))
        f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def read_hmx1(path: PathLike) -> np.ndarray:
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != HMX1_MAGIC:
        raise ValidationError(f"{path}: not an HMX1 container (magic {data[:4]!r})")
    if len(data) < 4 + _HEADER.size:
        raise ValidationError(f"{path}: truncated HMX1 header")
    rows, cols = _HEADER.unpack_from(data, 4)
    payload = data[4 + _HEADER.size:]
    if len(payload) != rows * cols * 8:
        raise ValidationError(f"{path}: expected {rows * cols * 8} data bytes, found {len(payload)}")
    return np.frombuffer(payload, dtype="<f8").reshape(rows, cols).astype(float)


def write_csv_matrix(path: PathLike, matrix) -> None:
    arr = np.atleast_2d(np.asarray(matrix, dtype=float))
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        for row in arr:
            writer.writerow([repr(float(v)) for v in row])


def read_csv_matrix(path: PathLike) -> np.ndarray:
    with open(path, newline="") as f:
        rows = [[float(v) for v in row] for row in csv.reader(f) if row]
    if not rows or len({len(r) for r in rows}) != 1:
        raise ValidationError(f"{path}: ragged or empty CSV matrix")
    return np.array(rows, dtype=float)


def write_vector(path: PathLike, v) -> None:
    """One value per line, full float precision."""
    write_csv_matrix(path, np.asarray(v, dtype=float).reshape(-1, 1))


def read_vector(path: PathLike) -> np.ndarray:
    return read_csv_matrix(path).ravel()


def read_matrix(path: PathLike) -> np.ndarray:
    """HMX1 or CSV, chosen by the file's leading bytes."""
    with open(path, "rb") as f:
        head = f.read(4)
    return read_hmx1(path) if head == HMX1_MAGIC else read_csv_matrix(path)


def save_problem(directory: PathLike, p: Problem, seed: Optional[int] = None,
                 spec: Optional[dict] = None) -> Path:
    """Write A, y (and u★, ε when known) as HMX1 files plus a problem.json sidecar."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_hmx1(directory / "A.hmx1", p.A)
    write_hmx1(directory / "y.hmx1", p.y)
    files = {"A": "A.hmx1", "y": "y.hmx1"}
    for name, value in (("u_star", p.u_star), ("eps", p.eps), ("scaling", p.scaling)):
        if value is not None:
            write_hmx1(directory / f"{name}.hmx1", value)
            files[name] = f"{name}.hmx1"
    sidecar = {
        "n": p.n,
        "d": p.d,
        "seed": seed,
        "spec": spec or {},
        "files": files,
        "column_normalized": p.column_normalized,
        "block_normalized": p.block_normalized,
        "frame_normalized": p.frame_normalized,
    }
    path = directory / "problem.json"
    path.write_text(json.dumps(sidecar, indent=2))
    return path


def load_problem(directory: PathLike) -> Problem:
    directory = Path(directory)
    try:
        sidecar = json.loads((directory / "problem.json").read_text())
    except FileNotFoundError:
        raise ValidationError(f"{directory}: missing problem.json sidecar")
    arrays = {name: read_hmx1(directory / fname) for name, fname in sidecar["files"].items()}
    vectors = {name: arr.ravel() for name, arr in arrays.items() if name != "A"}
    p = Problem(
        A=arrays["A"],
        column_normalized=sidecar.get("column_normalized", False),
        block_normalized=sidecar.get("block_normalized", False),
        frame_normalized=sidecar.get("frame_normalized", False),
        **vectors,
    )
    if (p.n, p.d) != (sidecar["n"], sidecar["d"]):
        raise ValidationError(f"{directory}: sidecar says {sidecar['n']}x{sidecar['d']}, A is {p.n}x{p.d}")
    return p


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(getattr(value, "value", value))


def _write_rows(path: PathLike, columns: Sequence[str], rows: Iterable[dict]) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_cell(row.get(c)) for c in columns])


def _read_rows(path: PathLike, columns: Sequence[str], optional: Sequence[str] = ()) -> List[dict]:
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        header = tuple(reader.fieldnames or ())
        if header not in (tuple(columns), tuple(columns) + tuple(optional)):
            raise ValidationError(f"{path}: columns {reader.fieldnames} do not match {list(columns)}")
        return [{k: (v if v != "" else None) for k, v in row.items()} for row in reader]


def write_trials_csv(path: PathLike, trials: Iterable[TrialRecord]) -> None:
    _write_rows(path, TRIAL_COLUMNS, (t.model_dump(by_alias=True) for t in trials))


def read_trials_csv(path: PathLike) -> List[TrialRecord]:
    rows = _read_rows(path, TRIAL_COLUMNS)
    return [TrialRecord.model_validate(row) for row in rows]


def write_plot_csv(path: PathLike, cells: Iterable[CellReport]) -> None:
    _write_rows(path, PLOT_COLUMNS, (c.model_dump() for c in cells))


def write_trace_csv(path: PathLike, trace: ConvergenceTrace) -> None:
    """Per-iteration trace; the Mahalanobis error column appears once linear_rate_estimate has filled it."""
    rows = trace_to_rows(trace)
    columns = TRACE_COLUMNS
    if any(TRACE_ERROR_COLUMN in row for row in rows):
        columns += (TRACE_ERROR_COLUMN,)
    _write_rows(path, columns, rows)


def read_trace_csv(path: PathLike) -> List[dict]:
    rows = _read_rows(path, TRACE_COLUMNS, optional=(TRACE_ERROR_COLUMN,))
    return [{k: (float(v) if v is not None else None) for k, v in row.items()} for row in rows]


def write_report(path: PathLike, report) -> None:
    """Any report model as indented JSON (aliases applied, arrays as lists)."""
    Path(path).write_text(report.model_dump_json(by_alias=True, indent=2))


def read_report(path: PathLike) -> ExperimentReport:
    return ExperimentReport.model_validate_json(Path(path).read_text())
