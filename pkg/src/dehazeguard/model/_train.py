"""Supervised training by plain minibatch SGD."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np
from tqdm import tqdm

from dehazeguard import autograd as ag
from dehazeguard._errors import ConfigError, DivergenceError
from dehazeguard.metrics import Distance, restoration_loss
from dehazeguard.util import rng, write_csv

from ._network import ModelParams, evaluate, forward

if TYPE_CHECKING:
    import os
    from pathlib import Path
    from typing import Any, Mapping

    from dehazeguard._dataset import HazeDataset

__all__ = ["TrainConfig", "TrainResult", "sgd_step", "train"]

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    """Settings for `train`.

    ``lr == 0`` and ``epochs == 0`` are both accepted and leave the parameters
    untouched.
    """

    epochs: int = 30
    batch_size: int = 8
    lr: float = 0.05
    seed: int = 0
    distance: Distance = Distance.MSE

    def __post_init__(self) -> None:
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch size must be >= 1, got {self.batch_size}")
        if not math.isfinite(self.lr) or self.lr < 0:
            raise ConfigError(f"learning rate must be finite and >= 0, got {self.lr}")
        object.__setattr__(self, "distance", Distance(self.distance))

    def as_dict(self) -> dict[str, Any]:
        return {
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "lr": self.lr,
            "seed": self.seed,
            "distance": str(self.distance),
        }


@dataclass
class TrainResult:
    params: ModelParams
    # one value per optimizer step
    losses: list[float] = field(default_factory=list)
    # mean validation PSNR after each epoch, when a validation set was given
    val_psnr: list[float] = field(default_factory=list)

    def losses_to_csv(self, path: str | os.PathLike[str]) -> Path:
        return write_csv(path, ["step", "loss"], enumerate(self.losses))


def sgd_step(tensors: Mapping[str, ag.Tensor], lr: float) -> None:
    """Apply ``p -= lr * grad`` in place to every tensor that received a gradient."""
    if lr == 0:
        return
    for t in tensors.values():
        if t.grad is not None:
            t.data -= t.data.dtype.type(lr) * t.grad


def _check_finite(value: float, epoch: int, step: int) -> None:
    if not math.isfinite(value):
        raise DivergenceError(
            f"training loss became {value} at epoch {epoch}, step {step}; "
            "try a smaller learning rate"
        )


def train(
    params: ModelParams,
    dataset: HazeDataset,
    cfg: TrainConfig | None = None,
    *,
    validation: HazeDataset | None = None,
    progress: bool = False,
) -> TrainResult:
    """Minimize the mean restoration loss of the raw prediction against ``J``.

    Batches are shuffled with the ``("shuffle", epoch)`` stream of ``cfg.seed``, so
    a fixed seed reproduces the trained parameters bitwise. `params` is not
    modified; the trained copy is returned.

    Raises
    ------
    DivergenceError
        If the loss becomes NaN or infinite.
    """
    cfg = cfg or TrainConfig()
    if len(dataset) == 0:
        raise ConfigError("cannot train on an empty dataset")
    tensors = params.tensors(requires_grad=True)
    result = TrainResult(params)
    steps_per_epoch = math.ceil(len(dataset) / cfg.batch_size)

    bar = tqdm(
        total=cfg.epochs * steps_per_epoch, desc="train", disable=not progress
    )
    with bar:
        for epoch in range(cfg.epochs):
            for idx in dataset.batches(cfg.batch_size, rng(cfg.seed, "shuffle", epoch)):
                for t in tensors.values():
                    t.zero_grad()
                hazy = ag.Tensor(dataset.hazy[idx])
                clear = ag.Tensor(dataset.clear[idx])
                loss = restoration_loss(forward(tensors, hazy), clear, cfg.distance)
                value = loss.item()
                _check_finite(value, epoch, len(result.losses))
                ag.backward(loss)
                sgd_step(tensors, cfg.lr)
                result.losses.append(value)
                bar.update()
                bar.set_postfix(loss=f"{value:.5f}")

            epoch_losses = result.losses[-steps_per_epoch:]
            mean_loss = float(np.mean(epoch_losses)) if epoch_losses else math.nan
            msg = f"epoch {epoch + 1}/{cfg.epochs}: mean loss {mean_loss:.6f}"
            if validation is not None:
                current = ModelParams.from_tensors(tensors)
                val = evaluate(current, validation).aggregate()["psnr_db"]["mean"]
                result.val_psnr.append(val)
                msg += f", val PSNR {val:.2f} dB"
            logger.info(msg)

    result.params = ModelParams.from_tensors(tensors)
    return result
