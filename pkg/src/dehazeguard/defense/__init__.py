"""Adversarial fine-tuning of the dehazing network and its evaluation."""

from ._config import MULTI_STEP_CHOICES, DefenseConfig, DefenseMode
from ._evaluate import (
    DEFAULT_EPSILONS,
    ABRow,
    DefenseReport,
    evaluate_defense,
    format_ab_table,
)
from ._trainer import DefenseResult, ValidationPoint, defend, defend_G, defend_P

__all__ = [
    "DEFAULT_EPSILONS",
    "MULTI_STEP_CHOICES",
    "ABRow",
    "DefenseConfig",
    "DefenseMode",
    "DefenseReport",
    "DefenseResult",
    "ValidationPoint",
    "defend",
    "defend_G",
    "defend_P",
    "evaluate_defense",
    "format_ab_table",
]
