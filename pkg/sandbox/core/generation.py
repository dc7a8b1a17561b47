"""
Trajectory-reusing generation.

sample_with_trajectory replays the reverse process from a stored x_T with
the stored noise maps under a new condition and guidance. With the
inversion condition and lambda_cfg = 1 it reproduces the input.
"""

import numpy as np

from core.guidance import check_schedule, guided_epsilon
from core.inversion import step_mean
from core.schedule import NoiseSchedule, marginal_coeffs, step_noise_scale
from core.world import GmmWorld
from sandbox_types import Condition, GuidanceConfig, LatentTrajectory, SolverKind
from sandbox_types.errors import TrajectoryMismatchError


def check_trajectory(traj: LatentTrajectory, s: NoiseSchedule, g: GuidanceConfig):
    """Reject replays whose schedule, step count or solver differ from the trajectory's."""
    check_schedule(s, g)
    if traj.schedule_id != s.fingerprint:
        raise TrajectoryMismatchError("trajectory was recovered with a different noise schedule")
    if traj.steps != s.T:
        raise TrajectoryMismatchError(f"trajectory has {traj.steps} steps, schedule has {s.T}")
    if traj.solver is not g.solver:
        raise TrajectoryMismatchError(
            f"trajectory solver '{traj.solver.value}' does not match guidance solver '{g.solver.value}'"
        )


def sample_with_trajectory(traj: LatentTrajectory, w: GmmWorld, s: NoiseSchedule, c: Condition,
                           g: GuidanceConfig) -> np.ndarray:
    """
    Regenerate from a trajectory: x_{t-1} = mu_hat_t(x_t, x_{t+1}, c, g) + sigma_t z_t.

    Starts at traj.x_T and reuses traj.z; DDIM trajectories are replayed by
    ddim_sample instead.

    Args:
        traj: Trajectory from ddpm_invert or ddim_invert
        w: World
        s: Schedule the trajectory was recovered with
        c: Generation condition
        g: Guidance settings (solver must match the trajectory)

    Returns:
        Generated x_0 with the trajectory's point shape
    """
    check_trajectory(traj, s, g)
    if traj.solver is SolverKind.DDIM:
        return ddim_sample(traj, w, s, c, g)

    x = np.array(traj.x_T, dtype=np.float64)
    x0_next = None
    for t in range(s.T, 0, -1):
        out_t = guided_epsilon(w, s, x, t, c, g)
        mean = step_mean(s, t, x, out_t, x0_next, g.solver)
        x = mean + step_noise_scale(s, t) * traj.z_at(t)
        x0_next = out_t.x0_hat
    return x


def ddim_sample(traj: LatentTrajectory, w: GmmWorld, s: NoiseSchedule, c: Condition,
                g: GuidanceConfig) -> np.ndarray:
    """Deterministic sigma = 0 sampling from traj.x_T under condition c."""
    check_trajectory(traj, s, g)
    x = np.array(traj.x_T, dtype=np.float64)
    for t in range(s.T, 0, -1):
        out = guided_epsilon(w, s, x, t, c, g)
        scale_prev, noise_prev = marginal_coeffs(s, t - 1)
        x = scale_prev * out.x0_hat + noise_prev * out.eps_hat
    return x
