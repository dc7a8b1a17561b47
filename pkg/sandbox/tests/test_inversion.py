"""
Tests for DDPM / DDIM inversion and trajectory replay.

Replay under the inversion condition must reproduce the input; the
recovered noise maps must satisfy the reverse-step identity bitwise.
"""

import os
import sys

import numpy as np
import pytest

# Add the sandbox directory to the path
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from core.denoiser import analytic_epsilon  # noqa: E402
from core.generation import sample_with_trajectory  # noqa: E402
from core.inversion import (  # noqa: E402
    ddim_invert,
    ddpm_invert,
    forward_noise,
    inversion_config,
    mu_estimate,
    multistep_data_term,
    reconstruction_error,
    uses_multistep,
)
from core.schedule import NoiseSchedule, build_schedule, log_snr, step_noise_scale  # noqa: E402
from core.world import GmmWorld, build_ring_world, identity_embedding, sample_world  # noqa: E402
from sandbox_types import Condition, GuidanceConfig, SolverKind  # noqa: E402
from sandbox_types.errors import IdentityConditionError, SolverError, TrajectoryMismatchError  # noqa: E402
from utils.helpers import relative_error  # noqa: E402


@pytest.fixture(scope="module")
def world():
    return build_ring_world()


@pytest.fixture(scope="module")
def schedule():
    return build_schedule(100)


@pytest.fixture(scope="module")
def points(world):
    return sample_world(world, 100, seed=123).points


@pytest.mark.parametrize("solver", [SolverKind.DPM_PP_2M, SolverKind.DDPM_FIRST_ORDER])
def test_round_trip_reconstruction(world, schedule, points, solver):
    """Test replay with the inversion condition reproduces 100 inputs within 1e-6"""
    traj = ddpm_invert(points, world, schedule, Condition(), solver=solver, seed=9)
    replay = sample_with_trajectory(traj, world, schedule, Condition(), inversion_config(schedule, solver))
    assert np.max(relative_error(replay, points)) <= 1e-6
    assert reconstruction_error(traj, world, schedule) <= 1e-6


def test_round_trip_with_attribute_condition(world, schedule, points):
    traj = ddpm_invert(points[:20], world, schedule, Condition(attribute=1), seed=4)
    assert traj.cond_used.attribute == 1
    assert reconstruction_error(traj, world, schedule) <= 1e-6


def test_replay_identity_holds_bitwise(world, schedule, points):
    """Test x_{t-1} = mu_hat_t(x_t, x_{t+1}) + sigma_t z_t for every stored step"""
    for solver in (SolverKind.DPM_PP_2M, SolverKind.DDPM_FIRST_ORDER):
        traj = ddpm_invert(points[:10], world, schedule, Condition(), solver=solver, seed=1)
        g = inversion_config(schedule, solver)
        for t in range(schedule.T, 0, -1):
            x_next = traj.x_at(t + 1) if t < schedule.T else None
            mean = mu_estimate(traj.x_at(t), x_next, t, world, schedule, Condition(), g)
            assert np.array_equal(mean + step_noise_scale(schedule, t) * traj.z_at(t), traj.x_at(t - 1))


def test_inversion_is_deterministic(world, schedule, points):
    a = ddpm_invert(points[:5], world, schedule, Condition(), seed=77)
    b = ddpm_invert(points[:5], world, schedule, Condition(), seed=77)
    c = ddpm_invert(points[:5], world, schedule, Condition(), seed=78)
    assert np.array_equal(a.x, b.x) and np.array_equal(a.z, b.z)
    assert not np.array_equal(a.z, c.z)


def test_sample_stream_does_not_depend_on_batch(world, schedule, points):
    """Test a sample's trajectory depends only on (seed, index)"""
    batch = ddpm_invert(points[:6], world, schedule, Condition(), seed=5, indices=[10, 11, 12, 13, 14, 15])
    single = ddpm_invert(points[3], world, schedule, Condition(), seed=5, indices=[13])
    assert np.allclose(batch.select(3).x, single.x, rtol=0, atol=1e-12)
    assert np.allclose(batch.select(3).z, single.z, rtol=0, atol=1e-9)


def test_forward_marginals(world, schedule):
    """Test each x_t follows sqrt(abar) x0 + sqrt(1 - abar) eps over 10k inversions"""
    x0 = np.array([1.0, -0.5])
    n = 10000
    traj = ddpm_invert(np.tile(x0, (n, 1)), world, schedule, Condition(), seed=3)
    for t in (5, 50, 100):
        alpha_bar = schedule.alpha_bar[t]
        samples = traj.x_at(t)
        std_error = np.sqrt((1 - alpha_bar) / n)
        assert np.all(np.abs(samples.mean(axis=0) - np.sqrt(alpha_bar) * x0) <= 4 * std_error + 1e-9)
        assert np.allclose(samples.var(axis=0), 1 - alpha_bar, rtol=0.05)


def test_forward_noise_stream():
    a = forward_noise(7, 2, 100, 2)
    assert a.shape == (100, 2)
    assert np.array_equal(a, forward_noise(7, 2, 100, 2))
    assert not np.array_equal(a, forward_noise(7, 3, 100, 2))


def test_single_step_schedule_replays_exactly(world):
    s = NoiseSchedule(beta=np.array([0.5]))
    x0 = np.array([2.0, 0.3])
    traj = ddpm_invert(x0, world, s, Condition(), solver=SolverKind.DDPM_FIRST_ORDER, seed=0)
    g = inversion_config(s, SolverKind.DDPM_FIRST_ORDER)
    mean = mu_estimate(traj.x_T, None, 1, world, s, Condition(), g)
    assert np.allclose(traj.z_at(1), (x0 - mean) / np.sqrt(0.5), atol=1e-12)
    assert np.allclose(sample_with_trajectory(traj, world, s, Condition(), g), x0, atol=1e-12)


def test_first_order_mean_is_textbook_ddpm(world, schedule):
    x = np.array([[0.5, 1.5], [-2.0, 0.0]])
    g = GuidanceConfig(lambda_cfg=1.0, solver=SolverKind.DDPM_FIRST_ORDER)
    for t in (1, 30, 100):
        eps = analytic_epsilon(world, schedule, x, t, Condition()).eps_hat
        beta = schedule.beta[t - 1]
        expected = (x - beta / np.sqrt(1 - schedule.alpha_bar[t]) * eps) / np.sqrt(1 - beta)
        assert np.allclose(mu_estimate(x, None, t, world, schedule, Condition(), g), expected, atol=1e-12)


def test_standard_normal_world_mean_is_contraction(schedule):
    """Test N(0, I) data: the first-order mean is sqrt(1 - beta_t) x_t"""
    w = GmmWorld.from_arrays([[0.0, 0.0]], np.eye(2), [1.0], [0], [0])
    g = GuidanceConfig(lambda_cfg=1.0, solver=SolverKind.DDPM_FIRST_ORDER)
    x = np.array([1.3, -0.4])
    for t in (1, 25, 100):
        expected = np.sqrt(1 - schedule.beta[t - 1]) * x
        assert np.allclose(mu_estimate(x, None, t, w, schedule, Condition(), g), expected, atol=1e-12)


def test_multistep_data_term_beats_first_order(schedule):
    """Test the 2M data term tracks the exact data prediction better than x0_t alone"""
    mu = np.array([1.0, 0.5])
    variance = 0.05
    w = GmmWorld.from_arrays([mu], variance * np.eye(2), [1.0], [0], [0])
    u = np.array([0.7, -1.2])

    def state(alpha_bar):
        # probability-flow path: the whitened residual u is conserved
        return np.sqrt(alpha_bar) * mu + np.sqrt(alpha_bar * variance + 1 - alpha_bar) * u

    def exact_x0(alpha_bar):
        return mu + u * variance * np.sqrt(alpha_bar) / np.sqrt(alpha_bar * variance + 1 - alpha_bar)

    x0_hat = {t: analytic_epsilon(w, schedule, state(schedule.alpha_bar[t]), t, Condition()).x0_hat
              for t in range(1, schedule.T + 1)}
    first_order, second_order = [], []
    for t in range(2, schedule.T):
        midpoint = 0.5 * (log_snr(schedule, t) + log_snr(schedule, t - 1))
        reference = exact_x0(1.0 / (1.0 + np.exp(-2.0 * midpoint)))
        first_order.append(np.linalg.norm(x0_hat[t] - reference))
        second_order.append(np.linalg.norm(multistep_data_term(schedule, t, x0_hat[t], x0_hat[t + 1]) - reference))

    first_order, second_order = np.array(first_order), np.array(second_order)
    assert second_order.sum() < first_order.sum()
    assert np.mean(second_order < first_order) >= 0.9


def test_multistep_data_term_range(schedule):
    with pytest.raises(SolverError):
        multistep_data_term(schedule, 1, np.zeros(2), np.zeros(2))
    with pytest.raises(SolverError):
        multistep_data_term(schedule, schedule.T, np.zeros(2), np.zeros(2))


def test_missing_next_state_raises(world, schedule):
    g = inversion_config(schedule, SolverKind.DPM_PP_2M)
    with pytest.raises(SolverError):
        mu_estimate(np.zeros(2), None, 50, world, schedule, Condition(), g)
    # t = T falls back to first order and needs no history
    mu_estimate(np.zeros(2), None, schedule.T, world, schedule, Condition(), g)


def test_ddim_reconstruction_on_single_component_world(schedule):
    """Test DDIM replay is close but not exact"""
    w = GmmWorld.from_arrays([[1.0, -1.0]], 0.5 * np.eye(2), [1.0], [0], [0])
    x0 = np.array([1.8, -0.2])
    traj = ddim_invert(x0, w, schedule, Condition())
    assert traj.solver is SolverKind.DDIM
    assert np.all(traj.z == 0)
    error = reconstruction_error(traj, w, schedule)
    assert 0 < error < 1e-2


def test_ddim_single_step_is_deterministic_map(world):
    s = NoiseSchedule(beta=np.array([0.3]))
    x0 = np.array([0.4, 1.9])
    traj = ddim_invert(x0, world, s, Condition())
    replay = sample_with_trajectory(traj, world, s, Condition(), inversion_config(s, SolverKind.DDIM))
    expected = analytic_epsilon(world, s, traj.x_T, 1, Condition()).x0_hat
    assert np.allclose(replay, expected, atol=1e-12)


def test_ddim_error_exceeds_ddpm_error(world, schedule, points):
    ddpm = ddpm_invert(points[:30], world, schedule, Condition(), seed=2)
    ddim = ddim_invert(points[:30], world, schedule, Condition())
    assert reconstruction_error(ddim, world, schedule) > reconstruction_error(ddpm, world, schedule)


def test_identity_condition_is_rejected(world, schedule):
    c = Condition(identity=identity_embedding(world, 0))
    with pytest.raises(IdentityConditionError):
        ddpm_invert(np.zeros(2), world, schedule, c)
    with pytest.raises(IdentityConditionError):
        ddim_invert(np.zeros(2), world, schedule, c)


def test_solver_checks(world, schedule, points):
    with pytest.raises(SolverError):
        ddpm_invert(points[0], world, schedule, Condition(), solver=SolverKind.DDIM)
    traj = ddpm_invert(points[0], world, schedule, Condition(), solver=SolverKind.DPM_PP_2M)
    with pytest.raises(TrajectoryMismatchError):
        sample_with_trajectory(traj, world, schedule, Condition(),
                               inversion_config(schedule, SolverKind.DDPM_FIRST_ORDER))
    with pytest.raises(TrajectoryMismatchError):
        other = build_schedule(100, "cosine")
        sample_with_trajectory(traj, world, other, Condition(), inversion_config(other, SolverKind.DPM_PP_2M))


def test_multistep_applies_on_interior_steps_only(schedule):
    """Test only the second-order solver uses the 2M term, and only for 2 <= t <= T-1"""
    T = schedule.T
    assert [uses_multistep(schedule, t, SolverKind.DPM_PP_2M) for t in (1, 2, T - 1, T)] == [False, True, True, False]
    assert not any(uses_multistep(schedule, t, SolverKind.DDPM_FIRST_ORDER) for t in range(1, T + 1))
    assert SolverKind.DPM_PP_2M.is_second_order
    assert not SolverKind.DDIM.is_second_order
