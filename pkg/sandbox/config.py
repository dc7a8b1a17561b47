"""
Configuration module for the reverse-personalization sandbox.

SandboxConfig holds process-wide defaults; any of them can be overridden
through environment variables or a local .env file. RunConfig is the
per-experiment file (TOML sections [world], [schedule], [guidance], [run])
read by every command, with SandboxConfig values pre-filled for missing keys.
"""
import json
import os
import re
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional

from sandbox_types.errors import ConfigError, SandboxValidationError


# Load SANDBOX_* overrides from .env files if they exist
def load_env_file():
    # The sandbox directory wins over the repository root; real env vars win over both
    for env_file in (Path(__file__).parent / ".env", Path(__file__).parent.parent / ".env"):
        if not env_file.exists():
            continue
        for line in env_file.read_text(encoding="utf-8").splitlines():
            line = line.strip()
            if line and not line.startswith("#") and "=" in line:
                key, value = line.split("=", 1)
                os.environ.setdefault(key.strip(), value.strip())


load_env_file()


class SandboxConfig:
    # Schedule defaults
    SCHEDULE_STEPS = int(os.getenv("SANDBOX_SCHEDULE_STEPS", "100"))
    SCHEDULE_KIND = os.getenv("SANDBOX_SCHEDULE_KIND", "linear")
    BETA_MIN = 1e-4
    BETA_MAX = 0.02

    # Default world: 8 identities x 2 attributes on two concentric rings
    WORLD_IDENTITIES = 8
    WORLD_ATTRIBUTES = 2
    WORLD_RADII = [2.0, 3.5]
    WORLD_VARIANCE = 0.05
    WORLD_SEED = 7
    WORLD_SAMPLES = 2000

    # Operating point used for the headline anonymization runs
    LAMBDA_CFG = -10.0
    LAMBDA_IPA = 1.0
    # Weight factor for other identities inside the conditional branch; 0 is the hard restriction
    IDENTITY_LEAKAGE = 1e-6
    SOLVER = os.getenv("SANDBOX_SOLVER", "dpm_pp_2m")

    # Run defaults
    SEED = int(os.getenv("SANDBOX_SEED", "0"))
    RUN_SAMPLES = 500
    OUTPUT_DIR = os.getenv("SANDBOX_OUTPUT_DIR", "./outputs")

    # Identity embeddings resolve to the identity whose cluster mean lies within this distance
    IDENTITY_MATCH_TOLERANCE = 1e-6

    # Execution
    THREADS = int(os.getenv("SANDBOX_THREADS", "0"))  # 0 = one worker per CPU
    LOG_LEVEL = os.getenv("SANDBOX_LOG_LEVEL", "INFO")

    # Monte-Carlo property thresholds
    RECONSTRUCTION_TOLERANCE = 1e-6


@dataclass
class WorldSettings:
    identities: int = SandboxConfig.WORLD_IDENTITIES
    attributes: int = SandboxConfig.WORLD_ATTRIBUTES
    radii: List[float] = field(default_factory=lambda: list(SandboxConfig.WORLD_RADII))
    variance: float = SandboxConfig.WORLD_VARIANCE
    seed: int = SandboxConfig.WORLD_SEED
    samples: int = SandboxConfig.WORLD_SAMPLES
    weights: Optional[List[float]] = None
    file: Optional[str] = None
    held_out: List[int] = field(default_factory=list)


@dataclass
class ScheduleSettings:
    steps: int = SandboxConfig.SCHEDULE_STEPS
    kind: str = SandboxConfig.SCHEDULE_KIND
    beta_min: float = SandboxConfig.BETA_MIN
    beta_max: float = SandboxConfig.BETA_MAX


@dataclass
class GuidanceSettings:
    lambda_cfg: float = SandboxConfig.LAMBDA_CFG
    lambda_ipa: float = SandboxConfig.LAMBDA_IPA
    identity_leakage: float = SandboxConfig.IDENTITY_LEAKAGE
    solver: str = SandboxConfig.SOLVER


@dataclass
class RunSettings:
    seed: int = SandboxConfig.SEED
    samples: int = SandboxConfig.RUN_SAMPLES
    output_dir: str = SandboxConfig.OUTPUT_DIR


_SECTIONS = {
    "world": WorldSettings,
    "schedule": ScheduleSettings,
    "guidance": GuidanceSettings,
    "run": RunSettings,
}

_INTEGER_FIELDS = {
    "world.identities", "world.attributes", "world.seed", "world.samples",
    "schedule.steps", "run.seed", "run.samples",
}
_FLOAT_FIELDS = {
    "world.variance", "schedule.beta_min", "schedule.beta_max",
    "guidance.lambda_cfg", "guidance.lambda_ipa", "guidance.identity_leakage",
}
_STRING_FIELDS = {"world.file", "schedule.kind", "guidance.solver", "run.output_dir"}
_FLOAT_LIST_FIELDS = {"world.radii", "world.weights"}
_INTEGER_LIST_FIELDS = {"world.held_out"}


@dataclass
class RunConfig:
    """One experiment's configuration, as read from a TOML file."""
    world: WorldSettings = field(default_factory=WorldSettings)
    schedule: ScheduleSettings = field(default_factory=ScheduleSettings)
    guidance: GuidanceSettings = field(default_factory=GuidanceSettings)
    run: RunSettings = field(default_factory=RunSettings)
    path: Optional[str] = None
    source_text: str = ""

    def build_schedule(self):
        from core.schedule import build_schedule
        try:
            return build_schedule(self.schedule.steps, self.schedule.kind,
                                  self.schedule.beta_min, self.schedule.beta_max)
        except SandboxValidationError as e:
            raise self.error(str(e), self._schedule_field(str(e)))

    def build_world(self):
        from core.world import build_ring_world, load_world_json
        if self.world.file:
            world_path = Path(self.world.file)
            if not world_path.is_absolute() and self.path:
                world_path = Path(self.path).parent / world_path
            try:
                return load_world_json(world_path)
            except (OSError, json.JSONDecodeError) as e:
                raise self.error(f"cannot load world file: {e}", "world.file")
            except SandboxValidationError as e:
                raise self.error(str(e), "world.file")
        try:
            return build_ring_world(
                identities=self.world.identities,
                attributes=self.world.attributes,
                radii=self.world.radii,
                variance=self.world.variance,
                seed=self.world.seed,
                weights=self.world.weights,
                held_out=self.world.held_out,
            )
        except SandboxValidationError as e:
            raise self.error(str(e), self._world_field(str(e)))

    def guidance_config(self, steps: Optional[int] = None):
        from sandbox_types import GuidanceConfig
        try:
            return GuidanceConfig(
                lambda_cfg=self.guidance.lambda_cfg,
                lambda_ipa=self.guidance.lambda_ipa,
                identity_leakage=self.guidance.identity_leakage,
                solver=self.guidance.solver,
                steps=steps if steps is not None else self.schedule.steps,
            )
        except SandboxValidationError as e:
            raise self.error(str(e), self._guidance_field(str(e)))

    def error(self, message: str, dotted: Optional[str]) -> ConfigError:
        """Build a ConfigError anchored at the line where `dotted` is set."""
        line = _locate_key(self.source_text, dotted) if dotted else None
        return ConfigError(message, path=self.path, field=dotted, line=line)

    @staticmethod
    def _world_field(message: str) -> str:
        for name in ("held", "weights", "radii", "variance", "identities", "attributes"):
            if name in message:
                return "world.held_out" if name == "held" else f"world.{name}"
        return "world"

    @staticmethod
    def _schedule_field(message: str) -> str:
        if "beta" in message or "rate" in message:
            return "schedule.beta_min"
        if "kind" in message:
            return "schedule.kind"
        return "schedule.steps"

    @staticmethod
    def _guidance_field(message: str) -> str:
        if "lambda_ipa" in message:
            return "guidance.lambda_ipa"
        if "leakage" in message:
            return "guidance.identity_leakage"
        if "solver" in message:
            return "guidance.solver"
        return "guidance.lambda_cfg"


def _locate_key(text: str, dotted: str) -> Optional[int]:
    """Return the 1-based line where `section.key` is assigned, if present."""
    if not text or "." not in dotted:
        return None
    section, key = dotted.split(".", 1)
    current = None
    header = re.compile(r"^\s*\[\s*([A-Za-z0-9_.-]+)\s*\]\s*(#.*)?$")
    assignment = re.compile(r"^\s*([A-Za-z0-9_-]+)\s*=")
    section_line = None
    for number, line in enumerate(text.splitlines(), start=1):
        match = header.match(line)
        if match:
            current = match.group(1)
            if current == section:
                section_line = number
            continue
        match = assignment.match(line)
        if match and current == section and match.group(1) == key:
            return number
    return section_line


def _coerce(dotted: str, value: Any, config: RunConfig) -> Any:
    if dotted in _INTEGER_FIELDS:
        if isinstance(value, bool) or not isinstance(value, int):
            raise config.error(f"expected an integer, got {value!r}", dotted)
        return value
    if dotted in _FLOAT_FIELDS:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise config.error(f"expected a number, got {value!r}", dotted)
        return float(value)
    if dotted in _STRING_FIELDS:
        if not isinstance(value, str):
            raise config.error(f"expected a string, got {value!r}", dotted)
        return value
    if dotted in _FLOAT_LIST_FIELDS:
        if not isinstance(value, list) or not all(
            isinstance(item, (int, float)) and not isinstance(item, bool) for item in value
        ):
            raise config.error(f"expected a list of numbers, got {value!r}", dotted)
        return [float(item) for item in value]
    if dotted in _INTEGER_LIST_FIELDS:
        if not isinstance(value, list) or not all(
            isinstance(item, int) and not isinstance(item, bool) for item in value
        ):
            raise config.error(f"expected a list of integers, got {value!r}", dotted)
        return list(value)
    raise config.error("unknown key", dotted)


def parse_run_config(text: str, path: Optional[str] = None) -> RunConfig:
    """Parse TOML text into a RunConfig, validating every key."""
    config = RunConfig(path=path, source_text=text)
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        line = None
        match = re.search(r"line (\d+)", str(e))
        if match:
            line = int(match.group(1))
        raise ConfigError(f"malformed TOML: {e}", path=path, line=line)

    for section, values in data.items():
        if section not in _SECTIONS:
            raise ConfigError("unknown section", path=path, field=section,
                              line=_locate_section(text, section))
        if not isinstance(values, dict):
            raise ConfigError("expected a table", path=path, field=section,
                              line=_locate_section(text, section))
        settings = getattr(config, section)
        for key, value in values.items():
            dotted = f"{section}.{key}"
            if not hasattr(settings, key):
                raise config.error("unknown key", dotted)
            setattr(settings, key, _coerce(dotted, value, config))

    _validate(config)
    return config


def _locate_section(text: str, section: str) -> Optional[int]:
    for number, line in enumerate(text.splitlines(), start=1):
        if re.match(rf"^\s*\[\s*{re.escape(section)}\s*\]", line):
            return number
    return None


def _validate(config: RunConfig):
    world = config.world
    if world.weights is not None:
        if len(world.weights) != world.identities * world.attributes:
            raise config.error(
                f"expected {world.identities * world.attributes} weights "
                f"(identities x attributes), got {len(world.weights)}", "world.weights")
        if any(weight <= 0 for weight in world.weights):
            raise config.error("every weight must be > 0", "world.weights")
        if abs(sum(world.weights) - 1.0) > 1e-12:
            raise config.error(f"weights must sum to 1, got {sum(world.weights)!r}", "world.weights")
    if world.samples < 1:
        raise config.error("must be >= 1", "world.samples")
    if config.run.samples < 1:
        raise config.error("must be >= 1", "run.samples")
    for dotted in ("world.seed", "run.seed"):
        section, key = dotted.split(".")
        if not 0 <= getattr(getattr(config, section), key) < 2 ** 64:
            raise config.error("seed must be a 64-bit unsigned integer", dotted)


def load_run_config(path) -> RunConfig:
    """
    Read and validate a run configuration file.

    Args:
        path: TOML file path, or None for the built-in defaults

    Returns:
        RunConfig with defaults filled in for missing keys
    """
    if path is None:
        return RunConfig()
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read config: {e}", path=str(path))
    return parse_run_config(text, path=str(path))


def settings_summary(config: RunConfig) -> Dict[str, Dict[str, Any]]:
    """Plain-dict echo of a run configuration for reports."""
    summary = {}
    for section in _SECTIONS:
        summary[section] = dict(vars(getattr(config, section)))
    return summary
