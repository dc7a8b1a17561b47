"""
Types module
"""

from .sandbox_types import (
    Condition,
    DenoiserOutput,
    GuidanceConfig,
    LatentTrajectory,
    MetricsRecord,
    ScheduleKind,
    SolverKind,
    TradeoffRow,
)

__all__ = [
    'Condition',
    'DenoiserOutput',
    'GuidanceConfig',
    'LatentTrajectory',
    'MetricsRecord',
    'ScheduleKind',
    'SolverKind',
    'TradeoffRow',
]
