"""
Tests for attribute-swap resampling on stored trajectories.
"""

import os
import sys

import numpy as np
import pytest

# Add the sandbox directory to the path
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from core.attribute_control import attribute_swap  # noqa: E402
from core.generation import sample_with_trajectory  # noqa: E402
from core.inversion import ddim_invert, ddpm_invert  # noqa: E402
from core.schedule import build_schedule  # noqa: E402
from core.world import build_ring_world, identity_embedding, posterior_attribute, sample_world  # noqa: E402
from sandbox_types import Condition, GuidanceConfig, SolverKind  # noqa: E402
from sandbox_types.errors import TrajectoryMismatchError, UnknownConditionError  # noqa: E402
from services.anonymizer_service import anonymize_batch  # noqa: E402


@pytest.fixture(scope="module")
def world():
    return build_ring_world()


@pytest.fixture(scope="module")
def schedule():
    return build_schedule(100)


def _ring_points(world, attribute, n, seed):
    samples = sample_world(world, 4 * n + 40, seed=seed)
    return samples.points[samples.attributes == attribute][:n]


def _inner_ring_points(world, n, seed):
    return _ring_points(world, 0, n, seed)


def test_swap_matches_direct_generation(world, schedule):
    """Test the residual substitution equals replay under the new attribute up to rounding"""
    points = _inner_ring_points(world, 10, seed=1)
    traj = ddpm_invert(points, world, schedule, Condition(attribute=0), seed=8)
    identity = Condition(identity=identity_embedding(world, 3))
    g = GuidanceConfig(lambda_cfg=-10.0, lambda_ipa=1.0)

    swapped = attribute_swap(traj, world, schedule, identity, 1, g)
    direct = sample_with_trajectory(traj, world, schedule, Condition(identity=identity.identity, attribute=1), g)
    scale = np.maximum(np.linalg.norm(direct, axis=1), 1.0)
    assert np.max(np.linalg.norm(swapped - direct, axis=1) / scale) <= 1e-10


def test_swap_to_same_attribute_reconstructs(world, schedule):
    """Test swapping to the inversion attribute under the null identity returns the input"""
    points = _inner_ring_points(world, 10, seed=2)
    traj = ddpm_invert(points, world, schedule, Condition(attribute=0), seed=3)
    g = GuidanceConfig(lambda_cfg=1.0)
    swapped = attribute_swap(traj, world, schedule, Condition(), 0, g)
    assert np.allclose(swapped, points, rtol=0, atol=1e-9)


def test_swap_sets_the_new_attribute(world, schedule):
    """Test 500 inner-ring samples swapped to the outer ring classify as the outer ring"""
    points = _inner_ring_points(world, 500, seed=11)
    result = anonymize_batch(points, world, schedule, GuidanceConfig(), new_attr=1, seed=0)
    labels, _ = posterior_attribute(world, result.outputs)
    assert np.mean(labels == 1) >= 0.90
    assert result.metrics.attr_accuracy >= 0.90


def test_swap_to_the_inner_ring(world, schedule):
    """Test 500 outer-ring samples swapped to the inner ring classify as the inner ring"""
    points = _ring_points(world, 1, 500, seed=13)
    result = anonymize_batch(points, world, schedule, GuidanceConfig(), new_attr=0, seed=0)
    labels, _ = posterior_attribute(world, result.outputs)
    assert np.mean(labels == 0) >= 0.90
    assert result.metrics.attr_accuracy >= 0.90
    assert result.metrics.reid_rate <= 0.05


def test_double_swap_restores_attribute_label(world, schedule):
    """Test a -> b then b -> a restores the attribute label (not the point)"""
    points = _inner_ring_points(world, 500, seed=12)
    g = GuidanceConfig()
    there = anonymize_batch(points, world, schedule, g, new_attr=1, seed=0)
    back = anonymize_batch(there.outputs, world, schedule, g, new_attr=0, seed=1)
    labels, _ = posterior_attribute(world, back.outputs)
    assert np.mean(labels == 0) >= 0.90


def test_swap_on_ddim_trajectory(world, schedule):
    points = _inner_ring_points(world, 5, seed=4)
    traj = ddim_invert(points, world, schedule, Condition(attribute=0))
    g = GuidanceConfig(lambda_cfg=1.0, solver=SolverKind.DDIM)
    swapped = attribute_swap(traj, world, schedule, Condition(), 1, g)
    labels, _ = posterior_attribute(world, swapped)
    assert swapped.shape == points.shape
    assert np.mean(labels == 1) >= 0.8


def test_swap_errors(world, schedule):
    points = _inner_ring_points(world, 3, seed=5)
    g = GuidanceConfig()
    unconditioned = ddpm_invert(points, world, schedule, Condition(), seed=0)
    with pytest.raises(TrajectoryMismatchError):
        attribute_swap(unconditioned, world, schedule, Condition(), 1, g)
    traj = ddpm_invert(points, world, schedule, Condition(attribute=0), seed=0)
    with pytest.raises(UnknownConditionError):
        attribute_swap(traj, world, schedule, Condition(), 5, g)
    with pytest.raises(TrajectoryMismatchError):
        attribute_swap(traj, world, schedule, Condition(), 1, g.with_overrides(solver="ddpm_first_order"))


def test_target_condition_keeps_the_identity(world):
    source = Condition(identity=identity_embedding(world, 2), attribute=0)
    target = source.with_attribute(1)
    assert target.attribute == 1
    assert np.array_equal(target.identity, source.identity)
    assert source.attribute == 0
