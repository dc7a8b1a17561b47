"""
Tests for the command-line interface: outputs, determinism and exit codes.

Runs use a small world sample and a 20-step schedule.
"""

import json
import os
import sys

import numpy as np
import pandas as pd
import pytest

# Add the sandbox directory to the path
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from app.main import main  # noqa: E402

SMALL_CONFIG = """
[world]
samples = 24

[schedule]
steps = 20

[run]
seed = 3
samples = 16
"""


@pytest.fixture
def config_path(tmp_path):
    path = tmp_path / "small.toml"
    path.write_text(SMALL_CONFIG)
    return str(path)


@pytest.fixture
def samples_csv(tmp_path, config_path):
    out = tmp_path / "world"
    assert main(["world", "--config", config_path, "--out", str(out)]) == 0
    return out / "samples.csv"


def test_world_writes_reproducible_files(tmp_path, config_path, samples_csv):
    assert (samples_csv.parent / "world.json").exists()
    frame = pd.read_csv(samples_csv)
    assert len(frame) == 24
    assert list(frame.columns) == ["x_0", "x_1", "identity", "attribute"]

    again = tmp_path / "again"
    assert main(["world", "--config", config_path, "--out", str(again)]) == 0
    assert (again / "samples.csv").read_bytes() == samples_csv.read_bytes()
    assert (again / "world.json").read_bytes() == (samples_csv.parent / "world.json").read_bytes()


def test_world_defaults(tmp_path):
    """Test the built-in defaults give 16 components and 2000 samples"""
    assert main(["world", "--out", str(tmp_path)]) == 0
    world = json.loads((tmp_path / "world.json").read_text())
    assert len(world["components"]) == 16
    assert len(pd.read_csv(tmp_path / "samples.csv")) == 2000


def test_world_rejects_unnormalized_weights(tmp_path, capsys):
    path = tmp_path / "weights.toml"
    path.write_text("[world]\nidentities = 2\nattributes = 1\nweights = [0.5, 0.4]\n")
    assert main(["world", "--config", str(path), "--out", str(tmp_path)]) == 2
    error = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert "world.weights" in error["error"]
    assert ":4:" in error["error"]


def test_anonymize_at_zero_scale_reproduces_inputs(tmp_path, config_path, samples_csv):
    out = tmp_path / "anon"
    code = main(["anonymize", "--config", config_path, "--input", str(samples_csv),
                 "--lambda-cfg", "0", "--out", str(out)])
    assert code == 0
    report = json.loads((out / "report.json").read_text())
    assert report["max_reconstruction_error"] <= 1e-6
    assert report["attribute_mode"] == "keep"
    assert report["config"]["lambda_cfg"] == 0.0

    frame = pd.read_csv(out / "anonymized.csv")
    inputs = frame[["x_0", "x_1"]].to_numpy()
    outputs = frame[["out_x_0", "out_x_1"]].to_numpy()
    assert np.allclose(outputs, inputs, rtol=0, atol=1e-6 * max(1.0, np.abs(inputs).max()))
    assert frame["reid"].all()


def test_anonymize_writes_trajectories(tmp_path, config_path, samples_csv):
    out = tmp_path / "anon"
    trajectories = tmp_path / "traj"
    code = main(["anonymize", "--config", config_path, "--input", str(samples_csv),
                 "--set-attr", "1", "--out", str(out), "--trajectory-dir", str(trajectories)])
    assert code == 0
    files = sorted(p.name for p in trajectories.iterdir())
    assert files[0] == "trajectory_00000.csv"
    assert len(files) == 24
    traj = pd.read_csv(trajectories / "trajectory_00000.csv")
    assert traj["t"].tolist() == list(range(21))
    assert json.loads((out / "report.json").read_text())["new_attr"] == 1


def test_sweep_writes_tables_and_plots(tmp_path, config_path):
    out = tmp_path / "sweep"
    code = main(["sweep", "--config", config_path, "--grid", "cfg=-10,0; ipa=1",
                 "--samples", "8", "--threads", "1", "--out", str(out)])
    assert code == 0
    for name in ("sweep.csv", "tradeoff.csv", "sweep_panels.svg", "tradeoff.svg"):
        assert (out / name).exists()
    assert pd.read_csv(out / "sweep.csv")["lambda_cfg"].tolist() == [-10.0, 0.0]

    rerun = tmp_path / "rerun"
    assert main(["sweep", "--config", config_path, "--grid", "cfg=-10,0; ipa=1",
                 "--samples", "8", "--threads", "2", "--out", str(rerun)]) == 0
    for name in ("sweep.csv", "tradeoff.csv", "sweep_panels.svg"):
        assert (rerun / name).read_bytes() == (out / name).read_bytes()


def test_ablate_and_recover(tmp_path, config_path, samples_csv):
    out = tmp_path / "ablate"
    assert main(["ablate", "--config", config_path, "--samples", "8", "--out", str(out)]) == 0
    ablation = json.loads((out / "ablation.json").read_text())
    assert set(ablation["arms"]) == {"ddpm", "ddim", "ddpm_first_order"}

    anon = tmp_path / "anon"
    assert main(["anonymize", "--config", config_path, "--input", str(samples_csv), "--out", str(anon)]) == 0
    assert main(["recover", "--config", config_path, "--input", str(anon / "anonymized.csv"),
                 "--out", str(anon)]) == 0
    recovery = json.loads((anon / "recovery.json").read_text())
    assert recovery["n"] == 24
    assert 0.0 <= recovery["recovered_reid_rate"] <= 1.0


def test_validation_failures_exit_with_two(tmp_path, config_path, samples_csv, capsys):
    out = str(tmp_path / "bad")
    assert main(["sweep", "--config", config_path, "--grid", "cfg=0:10:-1", "--out", out]) == 2
    error = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert error["error_type"] == "GridSpecError"
    assert error["status"] == "validation_error"

    assert main(["anonymize", "--config", config_path, "--input", str(tmp_path / "absent.csv"),
                 "--out", out]) == 2
    assert main(["anonymize", "--config", config_path, "--input", str(samples_csv),
                 "--set-attr", "7", "--out", out]) == 2
    assert main(["recover", "--config", config_path, "--input", str(samples_csv), "--out", out]) == 2

    broken = tmp_path / "broken.toml"
    broken.write_text("[world]\nidentities = 0\n")
    assert main(["world", "--config", str(broken), "--out", out]) == 2


def test_usage_errors_exit_with_two():
    assert main(["anonymize"]) == 2
    assert main(["anonymize", "--input", "x.csv", "--keep-attr", "--drop-attr"]) == 2
    assert main(["transmogrify"]) == 2
