"""
File formats and atomic writers.

Tables go through pandas with a fixed column order; worlds and reports are
JSON with sorted keys. Every writer stages a temporary file in the target
directory and renames it into place.
"""

import json
import os
import tempfile
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Optional, Sequence

import numpy as np
import pandas as pd

from sandbox_types import LatentTrajectory, MetricsRecord, TradeoffRow
from sandbox_types.sandbox_types import SWEEP_COLUMNS, TRADEOFF_COLUMNS
from sandbox_types.errors import DimensionError, SandboxValidationError

REPORT_FIELDS = ("reid_rate", "attr_accuracy", "quality", "mean_identity_distance", "max_reconstruction_error")


def atomic_write(path, write: Callable[[str], None]) -> Path:
    """Call write(tmp_path) and move the temporary file onto `path`."""
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    handle, tmp_path = tempfile.mkstemp(prefix=f".{target.name}.", suffix=".tmp", dir=target.parent)
    os.close(handle)
    try:
        write(tmp_path)
        os.replace(tmp_path, target)
    except BaseException:
        if os.path.exists(tmp_path):
            os.unlink(tmp_path)
        raise
    return target


def write_csv(frame: pd.DataFrame, path) -> Path:
    return atomic_write(path, lambda tmp: frame.to_csv(tmp, index=False, lineterminator="\n"))


def write_json(data: Dict, path) -> Path:
    text = json.dumps(data, indent=2, sort_keys=True, allow_nan=False) + "\n"

    def _write(tmp: str):
        with open(tmp, "w", encoding="utf-8") as f:
            f.write(text)

    return atomic_write(path, _write)


def point_columns(dim: int, prefix: str = "x") -> List[str]:
    return [f"{prefix}_{i}" for i in range(dim)]


def samples_frame(points: np.ndarray, identities: Sequence[int], attributes: Sequence[int]) -> pd.DataFrame:
    """World-sample table: x_0..x_{d-1}, identity, attribute."""
    points = np.atleast_2d(points)
    frame = pd.DataFrame(points, columns=point_columns(points.shape[1]))
    frame["identity"] = np.asarray(identities, dtype=np.int64)
    frame["attribute"] = np.asarray(attributes, dtype=np.int64)
    return frame


def read_points_csv(path, dim: int) -> pd.DataFrame:
    """Read a CSV holding at least the columns x_0..x_{dim-1}."""
    try:
        frame = pd.read_csv(path)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise SandboxValidationError(f"cannot read {path}: {e}")
    missing = [column for column in point_columns(dim) if column not in frame.columns]
    if missing:
        raise DimensionError(f"{path}: missing point columns {', '.join(missing)}")
    if frame.empty:
        raise SandboxValidationError(f"{path}: no rows")
    points = frame[point_columns(dim)].to_numpy(dtype=np.float64)
    if not np.all(np.isfinite(points)):
        raise SandboxValidationError(f"{path}: point columns must be finite numbers")
    return frame


def frame_points(frame: pd.DataFrame, dim: int, prefix: str = "x") -> np.ndarray:
    return frame[point_columns(dim, prefix)].to_numpy(dtype=np.float64)


def anonymization_frame(inputs: pd.DataFrame, result) -> pd.DataFrame:
    """Input columns followed by output coordinates, labels and per-sample flags."""
    frame = inputs.reset_index(drop=True).copy()
    outputs = np.atleast_2d(result.outputs)
    for column, values in zip(point_columns(outputs.shape[1], "out_x"), outputs.T):
        frame[column] = values
    frame["out_identity"] = np.asarray(result.output_identities, dtype=np.int64)
    frame["out_attribute"] = np.asarray(result.output_attributes, dtype=np.int64)
    frame["reid"] = np.asarray(result.reid, dtype=np.int64)
    frame["attr_match"] = np.asarray(result.attr_match, dtype=np.int64)
    frame["reconstruction_error"] = np.asarray(result.reconstruction_errors, dtype=np.float64)
    return frame


def sweep_frame(records: Iterable[MetricsRecord]) -> pd.DataFrame:
    return pd.DataFrame([record.to_row() for record in records], columns=list(SWEEP_COLUMNS))


def tradeoff_frame(rows: Iterable[TradeoffRow]) -> pd.DataFrame:
    return pd.DataFrame([row.to_row() for row in rows], columns=list(TRADEOFF_COLUMNS))


def trajectory_frame(traj: LatentTrajectory) -> pd.DataFrame:
    """
    Trajectory dump: t, x_*, z_*; z is empty at t = 0.

    Batched trajectories get a leading `sample` column (batch position) with
    one block of T + 1 rows per sample.
    """
    if traj.x.ndim == 2:
        blocks = [(None, traj.x, traj.z)]
    else:
        blocks = [(i, traj.x[:, i], traj.z[:, i]) for i in range(traj.x.shape[1])]

    dim = traj.x.shape[-1]
    tables = []
    for sample, x, z in blocks:
        z_padded = np.vstack([np.full((1, dim), np.nan), z])
        table = pd.DataFrame({"t": np.arange(traj.steps + 1, dtype=np.int64)})
        for column, values in zip(point_columns(dim), x.T):
            table[column] = values
        for column, values in zip(point_columns(dim, "z"), z_padded.T):
            table[column] = values
        if sample is not None:
            table.insert(0, "sample", sample)
        tables.append(table)
    return pd.concat(tables, ignore_index=True)


def metrics_report(record: MetricsRecord, extras: Optional[Dict] = None) -> Dict:
    """JSON report with the fixed metric fields plus a config echo."""
    report = {
        "reid_rate": record.reid_rate,
        "attr_accuracy": record.attr_accuracy,
        "quality": record.quality,
        "mean_identity_distance": record.mean_identity_distance,
        "max_reconstruction_error": float(record.extras.get("max_reconstruction_error", 0.0)),
        "n": record.n,
        "seed": record.seed,
        "config": record.config.to_dict(),
    }
    report.update(extras or {})
    return report
