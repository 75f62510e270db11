"""Attack objectives, looked up by `AttackKind`.

`AttackObjective.for_kind` walks the subclasses of `AttackObjective`, so a new
objective only has to subclass it and set `KIND` to become available.
"""

from __future__ import annotations

import logging
from abc import abstractmethod
from typing import TYPE_CHECKING, ClassVar

import numpy as np

from dehazeguard import autograd as ag
from dehazeguard._errors import ConfigError, ContractError, ShapeError
from dehazeguard.metrics import DEFAULT_SSIM, Distance, restoration_loss

from ._config import AttackKind, AttackTargets

if TYPE_CHECKING:
    from typing import Iterator, TypeVar

    from dehazeguard.metrics import SsimConfig

    _T = TypeVar("_T", bound=type)

__all__ = ["AttackObjective", "attack_loss", "compute_haze_mask"]

logger = logging.getLogger(__name__)


def _recurse_subclasses(cls: _T) -> Iterator[_T]:
    for subclass in cls.__subclasses__():
        yield subclass
        yield from _recurse_subclasses(subclass)


class AttackObjective:
    """A loss the attack maximizes, plus how the perturbation enters the input."""

    KIND: ClassVar[AttackKind]
    # AttackTargets fields that must not be None
    REQUIRES: ClassVar[tuple[str, ...]] = ()

    @classmethod
    def for_kind(cls, kind: AttackKind | str) -> AttackObjective:
        kind = AttackKind(kind)
        if not kind.uses_gradients:
            raise ContractError(f"attack kind {kind} has no loss to maximize")
        for subclass in _recurse_subclasses(cls):
            if getattr(subclass, "KIND", None) is kind:
                logger.debug(f"Using {subclass.__name__} for attack kind {kind}")
                return subclass()
        raise NotImplementedError(f"no objective registered for attack kind {kind}")

    def check(self, targets: AttackTargets) -> None:
        missing = [name for name in self.REQUIRES if getattr(targets, name) is None]
        if missing:
            raise ConfigError(f"attack kind {self.KIND} needs targets: {missing}")

    def perturb(
        self, hazy: ag.Tensor, delta: ag.Tensor, targets: AttackTargets
    ) -> ag.Tensor:
        """The attacked input ``I + delta``."""
        return ag.add(hazy, delta)

    @abstractmethod
    def loss(
        self,
        prediction: ag.Tensor,
        targets: AttackTargets,
        distance: Distance,
        cfg: SsimConfig = DEFAULT_SSIM,
    ) -> ag.Tensor:
        """Scalar loss on the prediction for the attacked input, to be maximized."""
        raise NotImplementedError


class PseudoLabelObjective(AttackObjective):
    """Push the prediction away from the prediction on the clean input."""

    KIND = AttackKind.PSEUDO_LABEL
    REQUIRES = ("prediction",)

    def loss(
        self,
        prediction: ag.Tensor,
        targets: AttackTargets,
        distance: Distance,
        cfg: SsimConfig = DEFAULT_SSIM,
    ) -> ag.Tensor:
        target = ag.Tensor(targets.prediction, dtype=prediction.dtype)
        return restoration_loss(prediction, target, distance, cfg)


class MaskedObjective(PseudoLabelObjective):
    """Like the pseudo-label attack, but perturbing only the masked pixels."""

    KIND = AttackKind.MASKED
    REQUIRES = ("prediction", "mask")

    def perturb(
        self, hazy: ag.Tensor, delta: ag.Tensor, targets: AttackTargets
    ) -> ag.Tensor:
        mask = ag.Tensor(targets.mask, dtype=delta.dtype)
        return ag.add(hazy, ag.mul(delta, mask))


class GroundTruthObjective(AttackObjective):
    """Push the prediction away from the clear image."""

    KIND = AttackKind.GROUND_TRUTH
    REQUIRES = ("clear",)

    def loss(
        self,
        prediction: ag.Tensor,
        targets: AttackTargets,
        distance: Distance,
        cfg: SsimConfig = DEFAULT_SSIM,
    ) -> ag.Tensor:
        target = ag.Tensor(targets.clear, dtype=prediction.dtype)
        return restoration_loss(prediction, target, distance, cfg)


class IdentityObjective(AttackObjective):
    """Pull the prediction toward the (clean) hazy input."""

    KIND = AttackKind.IDENTITY

    def loss(
        self,
        prediction: ag.Tensor,
        targets: AttackTargets,
        distance: Distance,
        cfg: SsimConfig = DEFAULT_SSIM,
    ) -> ag.Tensor:
        target = ag.Tensor(targets.hazy, dtype=prediction.dtype)
        return -restoration_loss(prediction, target, distance, cfg)


def attack_loss(
    kind: AttackKind | str,
    distance: Distance | str,
    prediction: ag.Tensor,
    targets: AttackTargets,
    cfg: SsimConfig = DEFAULT_SSIM,
) -> ag.Tensor:
    """Loss of attack `kind` on the raw prediction for an attacked input.

    Raises
    ------
    ContractError
        For the noise attack, which has no loss.
    ConfigError
        If a target the objective needs is missing.
    """
    objective = AttackObjective.for_kind(kind)
    objective.check(targets)
    return objective.loss(prediction, targets, Distance(distance), cfg)


def compute_haze_mask(hazy: np.ndarray, prediction: np.ndarray) -> np.ndarray:
    """Binary mask of pixels where ``I - J_p`` exceeds its mean over the image.

    Works on ``(H, W)``, ``(C, H, W)`` and ``(N, C, H, W)`` arrays. The mean is taken
    over every channel and pixel of one image; a pixel is selected on all channels
    when any of its channels is above the mean.
    """
    hazy = np.asarray(hazy, dtype=np.float64)
    prediction = np.asarray(prediction, dtype=np.float64)
    if hazy.shape != prediction.shape:
        raise ShapeError(
            f"mask inputs differ in shape: {hazy.shape} vs {prediction.shape}"
        )
    if hazy.ndim == 2:
        return compute_haze_mask(hazy[None], prediction[None])[0]
    if hazy.ndim == 4:
        return np.stack([compute_haze_mask(h, p) for h, p in zip(hazy, prediction)])
    if hazy.ndim != 3:
        raise ShapeError(f"cannot build a haze mask for shape {hazy.shape}")
    diff = hazy - prediction
    mu = diff.mean()
    selected = (diff > mu).any(axis=0)
    return np.broadcast_to(selected, diff.shape).astype(np.float32)
