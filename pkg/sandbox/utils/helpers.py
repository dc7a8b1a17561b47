"""
Utility functions for the anonymization sandbox.

This module provides the logging helpers used throughout the code base,
the documented seed-splitting rule for per-sample random streams, worker
count resolution and small formatting helpers for command output.
"""

import logging
import os
import sys
from typing import Any, Dict, Optional

import numpy as np

from config import SandboxConfig

_LOGGER_NAME = "sandbox"


def get_logger() -> logging.Logger:
    """
    Return the package logger, configuring a stderr handler on first use.

    Messages are written as `LEVEL: message`; the level comes from
    SANDBOX_LOG_LEVEL unless set_log_level() was called.
    """
    logger = logging.getLogger(_LOGGER_NAME)
    if not logger.handlers:
        handler = logging.StreamHandler(sys.stderr)
        handler.setFormatter(logging.Formatter("%(levelname)s: %(message)s"))
        logger.addHandler(handler)
        logger.setLevel(_parse_level(SandboxConfig.LOG_LEVEL))
        logger.propagate = False
    return logger


def _parse_level(level: str) -> int:
    value = logging.getLevelName(str(level).upper())
    return value if isinstance(value, int) else logging.INFO


def set_log_level(level: str):
    """Override the log level (used by the --log-level flag)."""
    get_logger().setLevel(_parse_level(level))


def log_error(message: str, exception: Optional[Exception] = None):
    """
    Log error messages to stderr.

    Args:
        message: Error message to log
        exception: Optional exception object for additional context
    """
    logger = get_logger()
    logger.error(message)
    if exception:
        logger.error(f"       Details: {exception}")


def log_warning(message: str):
    get_logger().warning(message)


def log_info(message: str):
    """
    Log informational messages to stderr.

    Args:
        message: Information message to log
    """
    get_logger().info(message)


def log_debug(message: str):
    """
    Log debug messages to stderr.

    Args:
        message: Debug message to log
    """
    get_logger().debug(message)


def sample_rng(seed: int, index: int) -> np.random.Generator:
    """
    Random stream for one sample.

    All randomness flows from one 64-bit seed: sample `index` draws from the
    generator seeded with the entropy pair (seed, index), which SeedSequence
    hashes into an independent stream. The same pair always yields the same
    draws regardless of batch composition or worker count.
    """
    return np.random.default_rng([int(seed), int(index)])


def resolve_thread_count(requested: Optional[int] = None) -> int:
    """
    Number of worker threads for parallel sweeps.

    Args:
        requested: Explicit count; falls back to SANDBOX_THREADS, then CPU count

    Returns:
        Positive worker count
    """
    count = requested if requested else SandboxConfig.THREADS
    env_override = os.getenv("SANDBOX_THREADS")
    if not requested and env_override:
        try:
            count = int(env_override)
        except ValueError:
            log_warning(f"Ignoring non-integer SANDBOX_THREADS={env_override!r}")
    if not count or count < 1:
        count = os.cpu_count() or 1
    return count


def format_metrics_summary(summary: Dict[str, Any]) -> str:
    """
    Format a metrics summary for display.

    Args:
        summary: Mapping of metric name to value

    Returns:
        Multi-line human readable summary
    """
    output = []
    output.append("Anonymization Summary")
    output.append("=" * 50)
    for key, value in summary.items():
        if isinstance(value, float):
            output.append(f"{key}: {value:.6g}")
        elif isinstance(value, dict):
            inner = ", ".join(f"{k}={v}" for k, v in value.items())
            output.append(f"{key}: {inner}")
        else:
            output.append(f"{key}: {value}")
    return '\n'.join(output)


def relative_error(estimate: np.ndarray, reference: np.ndarray) -> np.ndarray:
    """
    Per-sample relative error ||estimate - reference|| / max(||reference||, 1).

    The denominator is floored at 1 so points near the origin do not inflate
    the error.
    """
    estimate = np.asarray(estimate, dtype=np.float64)
    reference = np.asarray(reference, dtype=np.float64)
    diff = np.linalg.norm(estimate - reference, axis=-1)
    scale = np.maximum(np.linalg.norm(reference, axis=-1), 1.0)
    return diff / scale
