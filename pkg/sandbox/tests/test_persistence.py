"""
Tests for file formats, atomic writers and plot emission.
"""

import os
import sys

import numpy as np
import pandas as pd
import pytest

# Add the sandbox directory to the path
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from core.inversion import ddpm_invert  # noqa: E402
from core.schedule import build_schedule  # noqa: E402
from core.world import build_ring_world, sample_world  # noqa: E402
from sandbox_types import Condition, GuidanceConfig, MetricsRecord  # noqa: E402
from sandbox_types.errors import DimensionError, SandboxValidationError  # noqa: E402
from utils.persistence import (  # noqa: E402
    atomic_write,
    metrics_report,
    read_points_csv,
    samples_frame,
    sweep_frame,
    trajectory_frame,
    write_csv,
    write_json,
)
from utils.plotting import plot_sweep_panels, plot_tradeoff  # noqa: E402


def _record(cfg, ipa, reid=0.1):
    return MetricsRecord(reid_rate=reid, attr_accuracy=0.9, quality=0.4, mean_identity_distance=2.0,
                         config=GuidanceConfig(lambda_cfg=cfg, lambda_ipa=ipa), n=50, seed=0,
                         extras={"max_reconstruction_error": 1e-12})


def test_samples_csv_round_trip(tmp_path):
    samples = sample_world(build_ring_world(), 20, seed=0)
    path = write_csv(samples_frame(samples.points, samples.identities, samples.attributes), tmp_path / "s.csv")
    frame = read_points_csv(path, 2)
    assert list(frame.columns) == ["x_0", "x_1", "identity", "attribute"]
    assert np.allclose(frame[["x_0", "x_1"]].to_numpy(), samples.points)


def test_csv_writes_are_byte_stable(tmp_path):
    samples = sample_world(build_ring_world(), 50, seed=1)
    frame = samples_frame(samples.points, samples.identities, samples.attributes)
    a = write_csv(frame, tmp_path / "a.csv").read_bytes()
    b = write_csv(frame, tmp_path / "b.csv").read_bytes()
    assert a == b
    assert b"\r\n" not in a


def test_read_points_csv_validation(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("x_0,y\n1.0,2.0\n")
    with pytest.raises(DimensionError):
        read_points_csv(path, 2)
    path.write_text("x_0,x_1\n1.0,nan\n")
    with pytest.raises(SandboxValidationError):
        read_points_csv(path, 2)
    path.write_text("x_0,x_1\n")
    with pytest.raises(SandboxValidationError):
        read_points_csv(path, 2)
    with pytest.raises(SandboxValidationError):
        read_points_csv(tmp_path / "missing.csv", 2)


def test_atomic_write_leaves_no_partial_file(tmp_path):
    target = tmp_path / "out.json"

    def failing_write(tmp):
        with open(tmp, "w") as f:
            f.write("partial")
        raise RuntimeError("disk full")

    with pytest.raises(RuntimeError):
        atomic_write(target, failing_write)
    assert not target.exists()
    assert list(tmp_path.iterdir()) == []


def test_json_report_fields(tmp_path):
    report = metrics_report(_record(-10.0, 1.0), extras={"attribute_mode": "keep"})
    for field in ("reid_rate", "attr_accuracy", "quality", "mean_identity_distance", "max_reconstruction_error"):
        assert field in report
    assert report["max_reconstruction_error"] == 1e-12
    assert report["config"]["solver"] == "dpm_pp_2m"
    text = write_json(report, tmp_path / "report.json").read_text()
    assert text.index('"attr_accuracy"') < text.index('"reid_rate"')


def test_sweep_frame_columns():
    frame = sweep_frame([_record(-10.0, 1.0), _record(-5.0, 1.0)])
    assert list(frame.columns) == ["lambda_cfg", "lambda_ipa", "solver", "steps", "n", "seed",
                                   "reid_rate", "attr_accuracy", "quality", "mean_identity_distance"]
    assert frame["lambda_cfg"].tolist() == [-10.0, -5.0]


def test_trajectory_frame_layout():
    w = build_ring_world()
    s = build_schedule(10)
    points = sample_world(w, 3, seed=0).points
    single = trajectory_frame(ddpm_invert(points[0], w, s, Condition(), seed=0))
    assert list(single.columns) == ["t", "x_0", "x_1", "z_0", "z_1"]
    assert single["t"].tolist() == list(range(11))
    assert single.loc[0, ["z_0", "z_1"]].isna().all()
    assert not single.loc[1:, ["z_0", "z_1"]].isna().any().any()

    batched = trajectory_frame(ddpm_invert(points, w, s, Condition(), seed=0))
    assert list(batched.columns)[0] == "sample"
    assert len(batched) == 3 * 11


def test_plots_are_reproducible(tmp_path):
    records = [_record(cfg, ipa, reid=0.5 + cfg / 40) for ipa in (0.5, 1.0) for cfg in (-20.0, -10.0, 0.0)]
    csv_path = write_csv(sweep_frame(records), tmp_path / "sweep.csv")
    first = plot_sweep_panels(csv_path, tmp_path / "a.svg").read_bytes()
    second = plot_sweep_panels(csv_path, tmp_path / "b.svg").read_bytes()
    assert first == second
    assert first.lstrip().startswith(b"<?xml")
    tradeoff = plot_tradeoff(csv_path, tmp_path / "tradeoff.svg")
    assert tradeoff.stat().st_size > 0
    assert len(pd.read_csv(csv_path)) == 6
