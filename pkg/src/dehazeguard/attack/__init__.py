"""Sign-gradient adversarial attacks on the dehazing network."""

from ._config import AttackConfig, AttackKind, AttackResult, AttackTargets
from ._engine import (
    attack_dataset,
    attack_report,
    clip_to_image,
    init_delta,
    pgd_step,
    run_attack,
)
from ._objectives import AttackObjective, attack_loss, compute_haze_mask

__all__ = [
    "AttackConfig",
    "AttackKind",
    "AttackObjective",
    "AttackResult",
    "AttackTargets",
    "attack_dataset",
    "attack_loss",
    "attack_report",
    "clip_to_image",
    "compute_haze_mask",
    "init_delta",
    "pgd_step",
    "run_attack",
]
