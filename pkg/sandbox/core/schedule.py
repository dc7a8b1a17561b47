"""
Discrete diffusion noise schedule.

A NoiseSchedule holds the per-step noise rates beta_1..beta_T, the
cumulative products alpha_bar_0..alpha_bar_T (alpha_bar_0 = 1) and the DDPM
posterior standard deviations sigma_0..sigma_T. Arrays indexed by step keep
index 0 for t = 0, except `beta`, which holds beta_t at beta[t - 1].
"""

import hashlib
from dataclasses import dataclass, field
from typing import Tuple, Union

import numpy as np

from sandbox_types import ScheduleKind
from sandbox_types.errors import ScheduleError

COSINE_OFFSET = 0.008
COSINE_MAX_BETA = 0.999


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    """Immutable diffusion coefficients shared by forward, inversion and sampling."""
    beta: np.ndarray
    kind: ScheduleKind = ScheduleKind.LINEAR
    alpha_bar: np.ndarray = field(init=False, repr=False)
    sigma: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        beta = np.array(self.beta, dtype=np.float64).reshape(-1)
        if beta.size < 1:
            raise ScheduleError("schedule needs at least one step (T >= 1)")
        if not np.all(np.isfinite(beta)) or np.any(beta <= 0.0) or np.any(beta >= 1.0):
            raise ScheduleError("every noise rate beta_t must lie in (0, 1)")

        alpha_bar = np.empty(beta.size + 1, dtype=np.float64)
        alpha_bar[0] = 1.0
        alpha_bar[1:] = np.cumprod(1.0 - beta)

        # sigma_t^2 = beta_t (1 - alpha_bar_{t-1}) / (1 - alpha_bar_t); sigma_1 = 0
        sigma = np.zeros(beta.size + 1, dtype=np.float64)
        sigma[1:] = np.sqrt(beta * (1.0 - alpha_bar[:-1]) / (1.0 - alpha_bar[1:]))

        for array in (beta, alpha_bar, sigma):
            array.setflags(write=False)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "kind", ScheduleKind.parse(self.kind))
        object.__setattr__(self, "alpha_bar", alpha_bar)
        object.__setattr__(self, "sigma", sigma)

    @property
    def T(self) -> int:
        return int(self.beta.size)

    def beta_at(self, t: int) -> float:
        check_step(self, t, lower=1)
        return float(self.beta[t - 1])

    def alpha_bar_at(self, t: int) -> float:
        check_step(self, t)
        return float(self.alpha_bar[t])

    @property
    def fingerprint(self) -> str:
        return schedule_fingerprint(self)


def check_step(s: NoiseSchedule, t: int, lower: int = 0):
    """Raise ScheduleError unless lower <= t <= T."""
    if isinstance(t, bool) or int(t) != t or not lower <= t <= s.T:
        raise ScheduleError(f"step index {t} outside [{lower}, {s.T}]")


def build_schedule(T: int, kind: Union[str, ScheduleKind] = ScheduleKind.LINEAR,
                   beta_min: float = 1e-4, beta_max: float = 0.02) -> NoiseSchedule:
    """
    Build a noise schedule.

    Args:
        T: Number of steps (>= 1)
        kind: "linear" spaces beta uniformly from beta_min to beta_max;
              "cosine" uses the squared-cosine alpha_bar curve with betas
              clipped to [beta_min, 0.999]
        beta_min: Smallest noise rate, in (0, 1)
        beta_max: Largest noise rate, in [beta_min, 1)

    Returns:
        NoiseSchedule satisfying 0 < beta_t < 1 and strictly decreasing alpha_bar
    """
    if isinstance(T, bool) or int(T) != T or T < 1:
        raise ScheduleError(f"steps must be a positive integer, got {T!r}")
    T = int(T)
    if not (0.0 < beta_min <= beta_max < 1.0):
        raise ScheduleError(
            f"noise rates must satisfy 0 < beta_min <= beta_max < 1, got beta_min={beta_min}, beta_max={beta_max}"
        )
    try:
        kind = ScheduleKind.parse(kind)
    except ValueError as e:
        raise ScheduleError(str(e))

    if kind is ScheduleKind.LINEAR:
        beta = np.linspace(beta_min, beta_max, T, dtype=np.float64)
    else:
        steps = np.arange(T + 1, dtype=np.float64) / T
        curve = np.cos((steps + COSINE_OFFSET) / (1.0 + COSINE_OFFSET) * np.pi / 2.0) ** 2
        curve = curve / curve[0]
        beta = 1.0 - curve[1:] / curve[:-1]
        beta = np.clip(beta, beta_min, COSINE_MAX_BETA)
    return NoiseSchedule(beta=beta, kind=kind)


def marginal_coeffs(s: NoiseSchedule, t: int) -> Tuple[float, float]:
    """
    Forward marginal coefficients at step t.

    x_t = scale * x_0 + noise_scale * eps, with scale = sqrt(alpha_bar_t)
    and noise_scale = sqrt(1 - alpha_bar_t).
    """
    check_step(s, t)
    alpha_bar = float(s.alpha_bar[t])
    return float(np.sqrt(alpha_bar)), float(np.sqrt(1.0 - alpha_bar))


def step_noise_scale(s: NoiseSchedule, t: int) -> float:
    """
    Noise multiplier of the reverse step x_t -> x_{t-1}.

    Interior steps use the posterior sigma_t. At t = 1 the posterior sigma is
    0, so the step uses sqrt(beta_1) instead; this keeps the recovered noise
    map finite while replay stays exact.
    """
    check_step(s, t, lower=1)
    if t == 1:
        return float(np.sqrt(s.beta[0]))
    scale = float(s.sigma[t])
    if scale <= 0.0:
        raise ScheduleError(f"sigma_{t} is zero at an interior step")
    return scale


def log_snr(s: NoiseSchedule, t: int) -> float:
    """Half log signal-to-noise ratio 0.5 * log(alpha_bar_t / (1 - alpha_bar_t)); +inf at t = 0."""
    check_step(s, t)
    if t == 0:
        return float("inf")
    alpha_bar = float(s.alpha_bar[t])
    return 0.5 * float(np.log(alpha_bar) - np.log1p(-alpha_bar))


def schedule_fingerprint(s: NoiseSchedule) -> str:
    """Stable hex digest of (kind, T, beta), stored on trajectories."""
    payload = f"{s.kind.value}:{s.T}:".encode("utf-8") + s.beta.tobytes()
    return hashlib.md5(payload).hexdigest()
