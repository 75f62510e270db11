from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import TYPE_CHECKING

from dehazeguard._errors import ConfigError
from dehazeguard.attack import AttackConfig, AttackKind
from dehazeguard.metrics import Distance

if TYPE_CHECKING:
    from typing import Any

    import numpy as np

__all__ = ["MULTI_STEP_CHOICES", "DefenseConfig", "DefenseMode"]

# inner step counts sampled per iteration in the multi-step setting
MULTI_STEP_CHOICES = (20, 25, 30)


class DefenseMode(str, Enum):
    """Which target the inner attack and the robust loss term use."""

    PSEUDO_LABEL = "P"
    GROUND_TRUTH = "G"

    def __str__(self) -> str:
        return self.value

    @property
    def attack_kind(self) -> AttackKind:
        return AttackKind(self.value)


@dataclass(frozen=True)
class DefenseConfig:
    """Settings for adversarial fine-tuning.

    `steps` is either a fixed inner step count or a tuple to sample from at every
    iteration. The early-stop rule fires after `patience` consecutive validation
    windows whose attacked PSNR and SSIM moved by less than `psnr_tol` and
    `ssim_tol`, but never before `min_windows` windows.
    """

    mode: DefenseMode = DefenseMode.PSEUDO_LABEL
    lam: float = 1.0
    epsilon: float = 8 / 255
    alpha: float = 2 / 255
    steps: int | tuple[int, ...] = 10
    epochs: int = 40
    batch_size: int = 8
    lr: float = 0.01
    seed: int = 0
    distance: Distance = Distance.MSE
    window: int = 50
    early_stop: bool = True
    patience: int = 3
    min_windows: int = 3
    psnr_tol: float = 0.05
    ssim_tol: float = 0.002

    def __post_init__(self) -> None:
        object.__setattr__(self, "mode", DefenseMode(self.mode))
        object.__setattr__(self, "distance", Distance(self.distance))
        if isinstance(self.steps, (list, tuple)):
            object.__setattr__(self, "steps", tuple(int(s) for s in self.steps))
        if not math.isfinite(self.lam) or self.lam < 0:
            raise ConfigError(f"lambda must be finite and >= 0, got {self.lam}")
        if not 0 <= self.epsilon <= 1:
            raise ConfigError(f"epsilon must lie in [0, 1], got {self.epsilon}")
        if not self.alpha > 0:
            raise ConfigError(f"alpha must be > 0, got {self.alpha}")
        choices = self.step_choices
        if not choices or min(choices) < 0:
            raise ConfigError(f"inner steps must be >= 0, got {self.steps}")
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("epochs must be >= 0 and batch size >= 1")
        if not math.isfinite(self.lr) or self.lr < 0:
            raise ConfigError(f"learning rate must be finite and >= 0, got {self.lr}")
        if self.window < 1 or self.patience < 1 or self.min_windows < 0:
            raise ConfigError("window and patience must be >= 1, min_windows >= 0")

    @property
    def step_choices(self) -> tuple[int, ...]:
        return self.steps if isinstance(self.steps, tuple) else (self.steps,)

    def inner_steps(self, gen: np.random.Generator) -> int:
        """The inner step count for one iteration."""
        choices = self.step_choices
        if len(choices) == 1:
            return choices[0]
        return int(choices[gen.integers(len(choices))])

    def attack_config(self, steps: int | None = None) -> AttackConfig:
        """The inner (and validation) attack matching this defense."""
        return AttackConfig(
            kind=self.mode.attack_kind,
            distance=self.distance,
            epsilon=self.epsilon,
            alpha=self.alpha,
            steps=self.step_choices[0] if steps is None else steps,
            seed=self.seed,
        )

    def as_dict(self) -> dict[str, Any]:
        return {
            "mode": str(self.mode),
            "lambda": self.lam,
            "epsilon": self.epsilon,
            "alpha": self.alpha,
            "steps": list(self.step_choices),
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "lr": self.lr,
            "seed": self.seed,
            "distance": str(self.distance),
            "window": self.window,
            "early_stop": self.early_stop,
            "patience": self.patience,
            "min_windows": self.min_windows,
        }
