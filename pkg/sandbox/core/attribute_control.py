"""
Attribute-swap generation on a stored trajectory.

x_{t-1} = mu_hat_t(x_t, x_{t+1}, c_id, new_attr) + x_{t-1}^inv - mu_hat_t(x_t^inv, x_{t+1}^inv, null_id, c_attr)

The inversion-side mean is recomputed from the stored states at every step,
so the result agrees with sample_with_trajectory under (identity, new_attr)
up to floating-point rounding.
"""

import numpy as np

from core.generation import check_trajectory, ddim_sample
from core.guidance import guided_epsilon
from core.inversion import inversion_config, step_mean
from core.schedule import NoiseSchedule
from core.world import GmmWorld
from sandbox_types import Condition, GuidanceConfig, LatentTrajectory, SolverKind
from sandbox_types.errors import TrajectoryMismatchError, UnknownConditionError


def attribute_swap(traj: LatentTrajectory, w: GmmWorld, s: NoiseSchedule, identity: Condition,
                   new_attr: int, g: GuidanceConfig) -> np.ndarray:
    """
    Resample a trajectory under a new attribute label.

    Args:
        traj: Trajectory inverted with an attribute recorded in cond_used
        w: World
        s: Schedule of the trajectory
        identity: Condition whose identity (possibly null) steers generation
        new_attr: Target attribute label
        g: Guidance settings used on the generation side

    Returns:
        Generated x_0
    """
    check_trajectory(traj, s, g)
    if traj.cond_used.attribute is None:
        raise TrajectoryMismatchError("trajectory carries no attribute condition to swap")
    if new_attr not in w.attributes:
        raise UnknownConditionError(f"unknown attribute label {new_attr}")
    target = identity.with_attribute(new_attr)
    if traj.solver is SolverKind.DDIM:
        return ddim_sample(traj, w, s, target, g)

    g_inv = inversion_config(s, traj.solver)
    x = np.array(traj.x_T, dtype=np.float64)
    x0_next = None
    x0_next_inv = None
    for t in range(s.T, 0, -1):
        out_t = guided_epsilon(w, s, x, t, target, g)
        mean = step_mean(s, t, x, out_t, x0_next, g.solver)

        out_inv = guided_epsilon(w, s, traj.x_at(t), t, traj.cond_used, g_inv)
        mean_inv = step_mean(s, t, traj.x_at(t), out_inv, x0_next_inv, traj.solver)

        x = mean + (traj.x_at(t - 1) - mean_inv)
        x0_next = out_t.x0_hat
        x0_next_inv = out_inv.x0_hat
    return x
