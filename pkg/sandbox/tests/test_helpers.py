"""
Tests for seed splitting, thread resolution and small numeric helpers.
"""

import os
import sys

import numpy as np
import pytest

# Add the sandbox directory to the path
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from utils.helpers import format_metrics_summary, relative_error, resolve_thread_count, sample_rng  # noqa: E402


def test_sample_streams_depend_only_on_seed_and_index():
    a = sample_rng(5, 3).standard_normal(4)
    b = sample_rng(5, 3).standard_normal(4)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, sample_rng(5, 4).standard_normal(4))
    assert not np.array_equal(a, sample_rng(6, 3).standard_normal(4))


def test_relative_error_floors_the_denominator():
    assert relative_error(np.array([0.0, 1e-3]), np.zeros(2)) == pytest.approx(1e-3)
    assert relative_error(np.array([10.0, 0.0]), np.array([10.0, 1.0])) == pytest.approx(1 / np.sqrt(101))
    batch = relative_error(np.ones((3, 2)), np.ones((3, 2)))
    assert batch.shape == (3,)
    assert np.all(batch == 0.0)


def test_thread_count_resolution(monkeypatch):
    monkeypatch.delenv("SANDBOX_THREADS", raising=False)
    assert resolve_thread_count(3) == 3
    assert resolve_thread_count(None) >= 1
    monkeypatch.setenv("SANDBOX_THREADS", "2")
    assert resolve_thread_count(None) == 2
    assert resolve_thread_count(5) == 5
    monkeypatch.setenv("SANDBOX_THREADS", "many")
    assert resolve_thread_count(None) >= 1


def test_metrics_summary_formatting():
    text = format_metrics_summary({"reid_rate": 0.125, "identities": 8, "config": {"solver": "ddim"}})
    lines = text.splitlines()
    assert lines[0] == "Anonymization Summary"
    assert "reid_rate: 0.125" in lines
    assert "identities: 8" in lines
    assert "config: solver=ddim" in lines
