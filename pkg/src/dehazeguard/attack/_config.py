from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import TYPE_CHECKING

import numpy as np

from dehazeguard._errors import ConfigError
from dehazeguard.metrics import Distance

if TYPE_CHECKING:
    from typing import Any

__all__ = ["AttackConfig", "AttackKind", "AttackResult", "AttackTargets"]


class AttackKind(str, Enum):
    """What the attack pushes the prediction away from (or toward)."""

    PSEUDO_LABEL = "P"
    MASKED = "M"
    GROUND_TRUTH = "G"
    IDENTITY = "I"
    NOISE = "N"

    def __str__(self) -> str:
        return self.value

    @property
    def uses_gradients(self) -> bool:
        return self is not AttackKind.NOISE


@dataclass(frozen=True)
class AttackConfig:
    """One point of an attack sweep.

    `epsilon` and `alpha` are in image units (``8 / 255`` for an 8-level budget).
    The noise attack ignores `alpha`, `steps` and `distance`.
    """

    kind: AttackKind = AttackKind.PSEUDO_LABEL
    distance: Distance = Distance.MSE
    epsilon: float = 8 / 255
    alpha: float = 2 / 255
    steps: int = 10
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", AttackKind(self.kind))
        object.__setattr__(self, "distance", Distance(self.distance))
        if not math.isfinite(self.epsilon) or not 0 <= self.epsilon <= 1:
            raise ConfigError(f"epsilon must lie in [0, 1], got {self.epsilon}")
        if self.steps < 0:
            raise ConfigError(f"steps must be >= 0, got {self.steps}")
        if self.kind.uses_gradients and self.steps > 0 and not self.alpha > 0:
            raise ConfigError(f"alpha must be > 0 when steps > 0, got {self.alpha}")

    def with_(self, **changes: Any) -> AttackConfig:
        return replace(self, **changes)

    def as_dict(self) -> dict[str, Any]:
        return {
            "kind": str(self.kind),
            "distance": str(self.distance),
            "epsilon": self.epsilon,
            "alpha": self.alpha,
            "steps": self.steps,
            "seed": self.seed,
        }


@dataclass
class AttackTargets:
    """Reference images an attack objective may compare the prediction against.

    All arrays are ``(N, 3, H, W)``. `prediction` is the raw prediction on the
    clean input (or a teacher's), `mask` the haze mask for the masked attack.
    """

    hazy: np.ndarray
    prediction: np.ndarray | None = None
    clear: np.ndarray | None = None
    mask: np.ndarray | None = None


@dataclass
class AttackResult:
    """Outcome of one attack on one image (or batch).

    `prediction` and `clean_prediction` are clamped to [0, 1].
    `model_checksum` identifies the attacked parameters.
    """

    delta: np.ndarray
    adversarial: np.ndarray
    prediction: np.ndarray
    clean_prediction: np.ndarray
    losses: list[float] = field(default_factory=list)
    mask: np.ndarray | None = None
    model_checksum: str = ""

    @property
    def linf(self) -> float:
        """Largest absolute perturbation actually applied."""
        return float(np.max(np.abs(self.delta))) if self.delta.size else 0.0

    @property
    def mask_coverage(self) -> float:
        """Fraction of pixels the mask lets through (1.0 without a mask)."""
        if self.mask is None:
            return 1.0
        return float(self.mask.mean())
