"""Evolutionary prisoner's dilemma on k-regular graphs under periodically
switched update rules: closed-form replicator solutions, pair-approximation
dynamics and an agent-based simulator."""

__version__ = "0.1.0"

from .game import GameParams, PayoffMatrix, RuleKind, UpdateRule, coefficient_im, coefficient_pc  # noqa: E402
from .switched import (  # noqa: E402
    Classification,
    StablePoint,
    SwitchSchedule,
    classify,
    convergence_period,
    critical_instant_two_rules,
    trajectory_at,
)

__all__ = [
    "GameParams",
    "PayoffMatrix",
    "RuleKind",
    "UpdateRule",
    "coefficient_pc",
    "coefficient_im",
    "SwitchSchedule",
    "StablePoint",
    "Classification",
    "classify",
    "convergence_period",
    "critical_instant_two_rules",
    "trajectory_at",
]
