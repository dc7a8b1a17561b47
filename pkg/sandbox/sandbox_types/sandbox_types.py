"""
Core type definitions for the anonymization sandbox.

This module defines the records passed between the numerical engine, the
service layer and the command line: solver and schedule tags, the
conditioning payload of every denoiser call, denoiser outputs, inversion
trajectories, guidance settings and evaluation records.
"""

from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Dict, Optional, Union

import numpy as np

from sandbox_types.errors import SandboxValidationError, SolverError


class ScheduleKind(Enum):
    """Enumeration of noise schedule families."""
    LINEAR = "linear"
    COSINE = "cosine"

    @classmethod
    def parse(cls, value: Union[str, "ScheduleKind"]) -> "ScheduleKind":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            choices = ", ".join(kind.value for kind in cls)
            raise SandboxValidationError(f"unknown schedule kind '{value}' (expected one of: {choices})")


class SolverKind(Enum):
    """Enumeration of inversion / sampling solvers."""
    DDPM_FIRST_ORDER = "ddpm_first_order"
    DPM_PP_2M = "dpm_pp_2m"
    DDIM = "ddim"

    @classmethod
    def parse(cls, value: Union[str, "SolverKind"]) -> "SolverKind":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            choices = ", ".join(kind.value for kind in cls)
            raise SolverError(f"unknown solver '{value}' (expected one of: {choices})")

    @property
    def is_stochastic(self) -> bool:
        """True for the DDPM-style solvers that recover per-step noise maps."""
        return self is not SolverKind.DDIM

    @property
    def is_second_order(self) -> bool:
        return self is SolverKind.DPM_PP_2M


@dataclass(frozen=True, eq=False)
class Condition:
    """
    Conditioning payload of a denoiser call.

    `identity` is an identity embedding (the mean of one identity's cluster)
    or None for the null identity. `attribute` is an attribute label or None.
    The null identity is always an absent value, never a zero vector.
    """
    identity: Optional[np.ndarray] = None
    attribute: Optional[int] = None

    def __post_init__(self):
        if self.identity is not None:
            embedding = np.array(self.identity, dtype=np.float64).reshape(-1)
            if not np.all(np.isfinite(embedding)):
                raise SandboxValidationError("identity embedding must be finite")
            embedding.setflags(write=False)
            object.__setattr__(self, "identity", embedding)
        if self.attribute is not None:
            if isinstance(self.attribute, bool) or int(self.attribute) != self.attribute:
                raise SandboxValidationError(f"attribute label must be an integer, got {self.attribute!r}")
            object.__setattr__(self, "attribute", int(self.attribute))

    @property
    def has_identity(self) -> bool:
        return self.identity is not None

    def null_identity(self) -> "Condition":
        """Same condition with the identity removed (attribute kept)."""
        return Condition(identity=None, attribute=self.attribute)

    def with_attribute(self, attribute: Optional[int]) -> "Condition":
        return Condition(identity=self.identity, attribute=attribute)


@dataclass(frozen=True)
class DenoiserOutput:
    """
    Noise prediction at (x_t, t) and the data prediction it implies.

    x0_hat = (x_t - sqrt(1 - alpha_bar_t) * eps_hat) / sqrt(alpha_bar_t)
    """
    eps_hat: np.ndarray
    x0_hat: np.ndarray


@dataclass(frozen=True)
class GuidanceConfig:
    """
    Reverse-personalization guidance settings.

    lambda_cfg may be any real number; negative values steer generation away
    from the conditioning identity. lambda_ipa is the adapter scale and must
    be non-negative. identity_leakage in [0, 1) is the weight factor other
    identities keep inside the conditional branch. steps must equal the step
    count of the schedule in use.
    """
    lambda_cfg: float = -10.0
    lambda_ipa: float = 1.0
    identity_leakage: float = 1e-6
    solver: SolverKind = SolverKind.DPM_PP_2M
    steps: int = 100

    def __post_init__(self):
        object.__setattr__(self, "solver", SolverKind.parse(self.solver))
        object.__setattr__(self, "lambda_cfg", float(self.lambda_cfg))
        object.__setattr__(self, "lambda_ipa", float(self.lambda_ipa))
        object.__setattr__(self, "identity_leakage", float(self.identity_leakage))
        if not np.isfinite(self.lambda_cfg):
            raise SandboxValidationError("lambda_cfg must be finite")
        if not np.isfinite(self.lambda_ipa) or self.lambda_ipa < 0:
            raise SandboxValidationError(f"lambda_ipa must be >= 0, got {self.lambda_ipa}")
        if not np.isfinite(self.identity_leakage) or not 0.0 <= self.identity_leakage < 1.0:
            raise SandboxValidationError(f"identity leakage must lie in [0, 1), got {self.identity_leakage}")
        if int(self.steps) != self.steps or self.steps < 1:
            raise SandboxValidationError(f"steps must be a positive integer, got {self.steps}")
        object.__setattr__(self, "steps", int(self.steps))

    def with_overrides(self, **changes) -> "GuidanceConfig":
        return replace(self, **changes)

    def to_dict(self) -> Dict[str, Union[float, int, str]]:
        return {
            "lambda_cfg": self.lambda_cfg,
            "lambda_ipa": self.lambda_ipa,
            "identity_leakage": self.identity_leakage,
            "solver": self.solver.value,
            "steps": self.steps,
        }


@dataclass(frozen=True, eq=False)
class LatentTrajectory:
    """
    Result of inverting one point (or a batch sharing one condition).

    x holds x_0..x_T with shape (T + 1, ..., d); z holds z_1..z_T with shape
    (T, ..., d), so z_t lives at z[t - 1]. DDIM trajectories store zeros in z.
    """
    x: np.ndarray
    z: np.ndarray
    cond_used: Condition
    solver: SolverKind
    schedule_id: str

    def __post_init__(self):
        if self.x.shape[0] < 2:
            raise SandboxValidationError("trajectory needs at least x_0 and x_1")
        if self.z.shape != (self.x.shape[0] - 1,) + self.x.shape[1:]:
            raise SandboxValidationError(
                f"noise maps shape {self.z.shape} inconsistent with states shape {self.x.shape}"
            )
        self.x.setflags(write=False)
        self.z.setflags(write=False)

    @property
    def steps(self) -> int:
        return self.x.shape[0] - 1

    @property
    def x_0(self) -> np.ndarray:
        return self.x[0]

    @property
    def x_T(self) -> np.ndarray:
        return self.x[-1]

    def x_at(self, t: int) -> np.ndarray:
        return self.x[t]

    def z_at(self, t: int) -> np.ndarray:
        return self.z[t - 1]

    def select(self, index: int) -> "LatentTrajectory":
        """Single-sample view of a batched trajectory."""
        if self.x.ndim < 3:
            raise SandboxValidationError("trajectory is not batched")
        return LatentTrajectory(
            x=np.array(self.x[:, index]),
            z=np.array(self.z[:, index]),
            cond_used=self.cond_used,
            solver=self.solver,
            schedule_id=self.schedule_id,
        )


SWEEP_COLUMNS = (
    "lambda_cfg", "lambda_ipa", "solver", "steps", "n", "seed",
    "reid_rate", "attr_accuracy", "quality", "mean_identity_distance",
)

TRADEOFF_COLUMNS = (
    "lambda_ipa", "lambda_cfg", "solver", "steps",
    "reid_rate", "attr_accuracy", "quality",
)


@dataclass(frozen=True)
class MetricsRecord:
    """
    Aggregate evaluation of one batch of anonymized outputs.

    quality is the 2-Wasserstein distance between Gaussian moment fits of the
    outputs and of the world marginal; mean_identity_distance is the mean
    distance from each output to its input identity's embedding, in units of
    the component standard deviation.
    """
    reid_rate: float
    attr_accuracy: float
    quality: float
    mean_identity_distance: float
    config: GuidanceConfig
    n: int
    seed: int
    extras: Dict[str, float] = field(default_factory=dict, compare=False)

    def __post_init__(self):
        for name in ("reid_rate", "attr_accuracy"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise SandboxValidationError(f"{name} must lie in [0, 1], got {value}")
        if self.quality < 0 or self.mean_identity_distance < 0:
            raise SandboxValidationError("quality and mean_identity_distance must be non-negative")
        if self.n < 1:
            raise SandboxValidationError("metrics need at least one sample")

    def to_row(self) -> Dict[str, Union[float, int, str]]:
        row = dict(self.config.to_dict())
        row.update({
            "n": self.n,
            "seed": self.seed,
            "reid_rate": self.reid_rate,
            "attr_accuracy": self.attr_accuracy,
            "quality": self.quality,
            "mean_identity_distance": self.mean_identity_distance,
        })
        return {column: row[column] for column in SWEEP_COLUMNS}


@dataclass(frozen=True)
class TradeoffRow:
    """One row of the privacy-utility trade-off table."""
    config: GuidanceConfig
    reid_rate: float
    attr_accuracy: float
    quality: float

    def to_row(self) -> Dict[str, Union[float, int, str]]:
        row = dict(self.config.to_dict())
        row.update({
            "reid_rate": self.reid_rate,
            "attr_accuracy": self.attr_accuracy,
            "quality": self.quality,
        })
        return {column: row[column] for column in TRADEOFF_COLUMNS}
