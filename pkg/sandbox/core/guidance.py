"""
Reverse-personalization classifier-free guidance.

eps = lambda_cfg * eps(x_t, t, c_id) + (1 - lambda_cfg) * eps(x_t, t, null_id).
The conditional branch goes through the identity adapter at lambda_ipa; the
unconditional branch is identity-free. Negative lambda_cfg steers away from
the conditioning identity.
"""

import numpy as np

from core.denoiser import adapter_epsilon, analytic_epsilon
from core.schedule import NoiseSchedule
from core.world import GmmWorld
from sandbox_types import Condition, DenoiserOutput, GuidanceConfig
from sandbox_types.errors import ScheduleError


def check_schedule(s: NoiseSchedule, g: GuidanceConfig):
    if g.steps != s.T:
        raise ScheduleError(f"guidance config expects {g.steps} steps but the schedule has {s.T}")


def combine_guidance(eps_cond: np.ndarray, eps_uncond: np.ndarray, lambda_cfg: float) -> np.ndarray:
    """Affine guidance combination of two noise predictions."""
    eps_cond = np.asarray(eps_cond, dtype=np.float64)
    eps_uncond = np.asarray(eps_uncond, dtype=np.float64)
    if lambda_cfg == 1.0:
        return eps_cond
    if lambda_cfg == 0.0:
        return eps_uncond
    return lambda_cfg * eps_cond + (1.0 - lambda_cfg) * eps_uncond


def guided_epsilon(w: GmmWorld, s: NoiseSchedule, x_t, t: int, c: Condition,
                   g: GuidanceConfig) -> DenoiserOutput:
    """
    Guided noise prediction at (x_t, t).

    The attribute part of c applies to both branches. With a null identity
    both branches coincide and the result does not depend on lambda_cfg.

    Args:
        w: World
        s: Noise schedule (must have g.steps steps)
        x_t: Point (d,) or batch (n, d)
        t: Step index
        c: Condition
        g: Guidance settings

    Returns:
        DenoiserOutput of the guided prediction
    """
    check_schedule(s, g)
    uncond = analytic_epsilon(w, s, x_t, t, c.null_identity())
    if c.identity is None or g.lambda_cfg == 0.0:
        return uncond
    cond = adapter_epsilon(w, s, x_t, t, c, g.lambda_ipa, uncond=uncond, leakage=g.identity_leakage)
    if g.lambda_cfg == 1.0:
        return cond

    eps = combine_guidance(cond.eps_hat, uncond.eps_hat, g.lambda_cfg)
    alpha_bar = float(s.alpha_bar[t])
    x0 = (np.asarray(x_t, dtype=np.float64) - np.sqrt(1.0 - alpha_bar) * eps) / np.sqrt(alpha_bar)
    return DenoiserOutput(eps_hat=eps, x0_hat=x0)
