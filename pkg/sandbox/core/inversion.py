"""
Latent trajectory recovery.

ddpm_invert builds an edit-friendly forward path (every x_t drawn
independently from its forward marginal) and recovers the noise maps z_t
that make the stochastic reverse process land exactly on that path.
ddim_invert is the deterministic sigma = 0 variant used by the ablation.
Inversion always runs under the null identity.
"""

from typing import Optional, Sequence

import numpy as np

from config import SandboxConfig
from core.guidance import check_schedule, guided_epsilon
from core.schedule import NoiseSchedule, check_step, log_snr, marginal_coeffs, step_noise_scale
from core.world import GmmWorld, as_batch, effective_members
from sandbox_types import Condition, DenoiserOutput, GuidanceConfig, LatentTrajectory, SolverKind
from sandbox_types.errors import DimensionError, IdentityConditionError, SolverError
from utils.helpers import sample_rng


def forward_noise(seed: int, index: int, T: int, dim: int) -> np.ndarray:
    """
    Forward-path noise of one sample, shape (T, dim); row t - 1 perturbs x_t.

    Drawn from the per-sample stream of (seed, index), so a sample's path
    never depends on which other samples share its batch.
    """
    return sample_rng(seed, index).standard_normal((T, dim))


def multistep_data_term(s: NoiseSchedule, t: int, x0_t: np.ndarray, x0_next: np.ndarray) -> np.ndarray:
    """
    Two-step data prediction D = x0_t + (x0_t - x0_next) / (2r).

    r = (lambda_t - lambda_{t+1}) / (lambda_{t-1} - lambda_t) is the ratio of
    the previous and current steps in half-log-SNR. Defined for 2 <= t <= T - 1.
    """
    if not 2 <= t <= s.T - 1:
        raise SolverError(f"multistep data term needs 2 <= t <= {s.T - 1}, got t={t}")
    h = log_snr(s, t - 1) - log_snr(s, t)
    h_prev = log_snr(s, t) - log_snr(s, t + 1)
    r = h_prev / h
    return x0_t + (x0_t - x0_next) / (2.0 * r)


def posterior_coefficients(s: NoiseSchedule, t: int):
    """
    Coefficients of the DDPM posterior mean c_x * x_t + c_0 * x0.

    c_x = (1 - alpha_bar_{t-1}) sqrt(1 - beta_t) / (1 - alpha_bar_t),
    c_0 = sqrt(alpha_bar_{t-1}) beta_t / (1 - alpha_bar_t).
    """
    check_step(s, t, lower=1)
    beta = s.beta_at(t)
    alpha_bar = float(s.alpha_bar[t])
    alpha_bar_prev = float(s.alpha_bar[t - 1])
    c_x = (1.0 - alpha_bar_prev) * np.sqrt(1.0 - beta) / (1.0 - alpha_bar)
    c_0 = np.sqrt(alpha_bar_prev) * beta / (1.0 - alpha_bar)
    return c_x, c_0


def uses_multistep(s: NoiseSchedule, t: int, solver: SolverKind) -> bool:
    """2M applies on interior steps; t = T has no history and t = 1 ends at infinite log-SNR."""
    return solver.is_second_order and 2 <= t <= s.T - 1


def step_mean(s: NoiseSchedule, t: int, x_t: np.ndarray, out_t: DenoiserOutput,
              x0_next: Optional[np.ndarray], solver: SolverKind) -> np.ndarray:
    """
    Reverse-step mean from an already evaluated prediction at (x_t, t).

    First order uses the textbook DDPM mean. The multistep branch replaces
    x0 in the posterior mean by the two-step data term built from x0_next,
    the data prediction retained from step t + 1.
    """
    if solver is SolverKind.DDIM:
        raise SolverError("ddim has no stochastic reverse-step mean")
    if uses_multistep(s, t, solver):
        if x0_next is None:
            raise SolverError(f"second-order step t={t} needs the state at t+1")
        c_x, c_0 = posterior_coefficients(s, t)
        return c_x * x_t + c_0 * multistep_data_term(s, t, out_t.x0_hat, x0_next)
    beta = s.beta_at(t)
    alpha_bar = float(s.alpha_bar[t])
    return (x_t - beta / np.sqrt(1.0 - alpha_bar) * out_t.eps_hat) / np.sqrt(1.0 - beta)


def mu_estimate(x_t, x_next, t: int, w: GmmWorld, s: NoiseSchedule, c: Condition,
                g: GuidanceConfig) -> np.ndarray:
    """
    Guided reverse-step mean mu_hat_t(x_t, x_{t+1}, c).

    Args:
        x_t: Current state (d,) or (n, d)
        x_next: State at t + 1; required for interior second-order steps,
                ignored otherwise
        t: Step index, 1 <= t <= T
        w: World
        s: Noise schedule
        c: Condition applied to both guidance branches
        g: Guidance settings; g.solver selects the update

    Returns:
        Mean of x_{t-1}
    """
    check_step(s, t, lower=1)
    x_t = np.asarray(x_t, dtype=np.float64)
    out_t = guided_epsilon(w, s, x_t, t, c, g)
    x0_next = None
    if uses_multistep(s, t, g.solver):
        if x_next is None:
            raise SolverError(f"second-order step t={t} needs the state at t+1")
        x_next = np.asarray(x_next, dtype=np.float64)
        if x_next.shape != x_t.shape:
            raise DimensionError(f"x_next shape {x_next.shape} differs from x_t shape {x_t.shape}")
        x0_next = guided_epsilon(w, s, x_next, t + 1, c, g).x0_hat
    return step_mean(s, t, x_t, out_t, x0_next, g.solver)


def inversion_config(s: NoiseSchedule, solver: SolverKind) -> GuidanceConfig:
    """Guidance used during inversion: no extrapolation, null identity."""
    return GuidanceConfig(lambda_cfg=1.0, lambda_ipa=SandboxConfig.LAMBDA_IPA,
                          identity_leakage=SandboxConfig.IDENTITY_LEAKAGE, solver=solver, steps=s.T)


def _check_inversion_condition(w: GmmWorld, c: Condition):
    if c.identity is not None:
        raise IdentityConditionError("inversion runs under the null identity; drop the identity from the condition")
    effective_members(w, c)


def _sample_indices(indices: Optional[Sequence[int]], n: int) -> Sequence[int]:
    if indices is None:
        return range(n)
    if len(indices) != n:
        raise DimensionError(f"got {len(indices)} sample indices for {n} points")
    return indices


def ddpm_invert(x0, w: GmmWorld, s: NoiseSchedule, c: Condition,
                solver=SolverKind.DPM_PP_2M, seed: int = SandboxConfig.SEED,
                indices: Optional[Sequence[int]] = None) -> LatentTrajectory:
    """
    DDPM inversion with recovered noise maps.

    Each x_t = sqrt(alpha_bar_t) x_0 + sqrt(1 - alpha_bar_t) eps_t uses its
    own noise draw. Going down from t = T, z_t = (x_{t-1} - mu_hat_t) / sigma_t,
    and x_{t-1} is then rewritten as mu_hat_t + sigma_t z_t so the stored
    path satisfies the replay identity bitwise.

    Args:
        x0: Input point (d,) or batch (n, d) sharing condition c
        w: World
        s: Noise schedule
        c: Condition with null identity (attribute optional)
        solver: ddpm_first_order or dpm_pp_2m
        seed: Base seed of the forward noise
        indices: Sample index of every row (default 0..n-1)

    Returns:
        LatentTrajectory with x of shape (T + 1, ...) and z of shape (T, ...)
    """
    solver = SolverKind.parse(solver)
    if not solver.is_stochastic:
        raise SolverError(f"ddpm_invert does not support solver '{solver.value}'; use ddim_invert")
    _check_inversion_condition(w, c)
    batch, single = as_batch(w, x0)
    if not np.all(np.isfinite(batch)):
        raise DimensionError("input points must be finite")
    g = inversion_config(s, solver)
    T = s.T

    noise = np.stack([forward_noise(seed, index, T, w.dim) for index in _sample_indices(indices, batch.shape[0])],
                     axis=1)
    x = np.empty((T + 1,) + batch.shape, dtype=np.float64)
    x[0] = batch
    for t in range(1, T + 1):
        scale, noise_scale = marginal_coeffs(s, t)
        x[t] = scale * batch + noise_scale * noise[t - 1]

    z = np.empty((T,) + batch.shape, dtype=np.float64)
    x0_next = None
    for t in range(T, 0, -1):
        out_t = guided_epsilon(w, s, x[t], t, c, g)
        mean = step_mean(s, t, x[t], out_t, x0_next, solver)
        sigma = step_noise_scale(s, t)
        z[t - 1] = (x[t - 1] - mean) / sigma
        x[t - 1] = mean + sigma * z[t - 1]
        x0_next = out_t.x0_hat

    if single:
        x, z = x[:, 0], z[:, 0]
    return LatentTrajectory(x=x, z=z, cond_used=c, solver=solver, schedule_id=s.fingerprint)


def ddim_invert(x0, w: GmmWorld, s: NoiseSchedule, c: Condition) -> LatentTrajectory:
    """
    Deterministic DDIM inversion (sigma = 0 path).

    x_t = sqrt(alpha_bar_t) x0_hat + sqrt(1 - alpha_bar_t) eps(x_{t-1}, t),
    with x0_hat taken from x_{t-1}. Noise maps are stored as zeros and
    replay reconstructs x_0 only approximately.
    """
    _check_inversion_condition(w, c)
    batch, single = as_batch(w, x0)
    if not np.all(np.isfinite(batch)):
        raise DimensionError("input points must be finite")
    g = inversion_config(s, SolverKind.DDIM)
    T = s.T

    x = np.empty((T + 1,) + batch.shape, dtype=np.float64)
    x[0] = batch
    for t in range(1, T + 1):
        eps = guided_epsilon(w, s, x[t - 1], t, c, g).eps_hat
        scale_prev, noise_prev = marginal_coeffs(s, t - 1)
        scale, noise_scale = marginal_coeffs(s, t)
        x0_hat = (x[t - 1] - noise_prev * eps) / scale_prev
        x[t] = scale * x0_hat + noise_scale * eps
    z = np.zeros((T,) + batch.shape, dtype=np.float64)

    if single:
        x, z = x[:, 0], z[:, 0]
    return LatentTrajectory(x=x, z=z, cond_used=c, solver=SolverKind.DDIM, schedule_id=s.fingerprint)


def reconstruction_error(traj: LatentTrajectory, w: GmmWorld, s: NoiseSchedule) -> float:
    """
    Max relative error of the matched-condition replay (lambda_cfg = 1).

    ||x0_replay - x_0|| / max(||x_0||, 1) maximized over the batch.
    """
    from core.generation import sample_with_trajectory
    from utils.helpers import relative_error

    g = inversion_config(s, traj.solver)
    check_schedule(s, g)
    replay = sample_with_trajectory(traj, w, s, traj.cond_used, g)
    return float(np.max(relative_error(replay, traj.x_0)))
