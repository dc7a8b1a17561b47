"""
Exception hierarchy for the anonymization sandbox.

Validation errors (bad caller input, bad configuration) derive from
SandboxValidationError and map to exit code 2 on the command line. Anything
else raised inside the engine is treated as an internal error.
"""

from typing import Optional


class SandboxError(Exception):
    """Base class for all sandbox errors."""


class SandboxValidationError(SandboxError, ValueError):
    """Raised when caller-supplied input violates a documented precondition."""


class ScheduleError(SandboxValidationError):
    """Invalid noise schedule parameters or step index."""


class WorldValidationError(SandboxValidationError):
    """Gaussian mixture world violates one of its invariants."""


class UnknownConditionError(SandboxValidationError):
    """Condition references an identity or attribute the world does not know."""


class IdentityConditionError(SandboxValidationError):
    """Inversion was asked to run with a non-null identity condition."""


class SolverError(SandboxValidationError):
    """Solver tag or solver inputs are inconsistent."""


class TrajectoryMismatchError(SandboxValidationError):
    """Trajectory does not match the schedule or guidance config it is replayed with."""


class DimensionError(SandboxValidationError):
    """Array shapes do not agree."""


class GridSpecError(SandboxValidationError):
    """Sweep grid specification is empty or malformed."""


class ConfigError(SandboxValidationError):
    """
    Run configuration problem.

    Carries the file path, the dotted field name and the 1-based line where
    the field appears so the message can be anchored in the file.
    """

    def __init__(self, message: str, path: Optional[str] = None,
                 field: Optional[str] = None, line: Optional[int] = None):
        self.path = path
        self.field = field
        self.line = line
        super().__init__(self._format(message))

    def _format(self, message: str) -> str:
        location = self.path or "<config>"
        if self.line is not None:
            location = f"{location}:{self.line}"
        if self.field:
            return f"{location}: {self.field}: {message}"
        return f"{location}: {message}"
