"""Adversarial fine-tuning as a min-max game.

Each iteration crafts a perturbation against the current network (inner
maximization, parameters fixed), then takes one SGD step on the clean
restoration loss plus ``lam`` times the loss on the attacked input.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import TYPE_CHECKING

import numpy as np
from tqdm import tqdm

from dehazeguard import autograd as ag
from dehazeguard._errors import ConfigError, DivergenceError
from dehazeguard.attack import attack_dataset, attack_report, run_attack
from dehazeguard.metrics import restoration_loss
from dehazeguard.model import ModelParams, TeacherModel, evaluate, forward, sgd_step
from dehazeguard.util import rng, write_csv

from ._config import DefenseConfig, DefenseMode

if TYPE_CHECKING:
    import os
    from pathlib import Path
    from typing import Any

    from dehazeguard._dataset import HazeDataset

__all__ = ["DefenseResult", "ValidationPoint", "defend", "defend_G", "defend_P"]

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ValidationPoint:
    """Validation metrics measured at the end of one loss window."""

    window: int
    iteration: int
    psnr_db: float
    ssim: float
    clean_psnr_db: float


@dataclass
class DefenseResult:
    params: ModelParams
    # per iteration
    losses: list[float] = field(default_factory=list)
    clean_losses: list[float] = field(default_factory=list)
    adversarial_losses: list[float] = field(default_factory=list)
    # mean total loss per window
    curve: list[float] = field(default_factory=list)
    validation: list[ValidationPoint] = field(default_factory=list)
    stopped_early: bool = False
    iterations: int = 0
    teacher_checksum: str | None = None
    window: int = 50

    def curve_to_csv(self, path: str | os.PathLike[str]) -> Path:
        """One row per window: index, last iteration, mean total/clean/attacked loss."""
        width = self.window
        rows = []
        for i, value in enumerate(self.curve):
            sl = slice(i * width, (i + 1) * width)
            rows.append(
                (
                    i,
                    (i + 1) * width,
                    value,
                    float(np.mean(self.clean_losses[sl])),
                    float(np.mean(self.adversarial_losses[sl])),
                )
            )
        header = ["window", "iteration", "loss", "clean_loss", "adversarial_loss"]
        return write_csv(path, header, rows)

    def validation_to_csv(self, path: str | os.PathLike[str]) -> Path:
        return write_csv(
            path,
            ["window", "iteration", "psnr_db", "ssim", "clean_psnr_db"],
            (
                (v.window, v.iteration, v.psnr_db, v.ssim, v.clean_psnr_db)
                for v in self.validation
            ),
        )

    def summary(self) -> dict[str, Any]:
        return {
            "iterations": self.iterations,
            "windows": len(self.curve),
            "stopped_early": self.stopped_early,
            "final_loss": self.curve[-1] if self.curve else None,
            "teacher_checksum": self.teacher_checksum,
            "student_checksum": self.params.checksum(),
        }


def _validate(
    params: ModelParams,
    validation: HazeDataset,
    cfg: DefenseConfig,
    window: int,
    iteration: int,
) -> ValidationPoint:
    attack_cfg = cfg.attack_config()
    results = attack_dataset(params, validation, attack_cfg)
    attacked = attack_report(results, validation, attack_cfg).aggregate()
    clean = evaluate(params, validation).aggregate()
    return ValidationPoint(
        window=window,
        iteration=iteration,
        psnr_db=attacked["psnr_db"]["mean"],
        ssim=attacked["ssim"]["mean"],
        clean_psnr_db=clean["psnr_db"]["mean"],
    )


def _is_stable(points: list[ValidationPoint], cfg: DefenseConfig) -> bool:
    """True when the last `patience` changes between windows are within tolerance."""
    if len(points) < max(cfg.min_windows, cfg.patience + 1):
        return False
    recent = points[-(cfg.patience + 1) :]
    return all(
        abs(b.psnr_db - a.psnr_db) < cfg.psnr_tol
        and abs(b.ssim - a.ssim) < cfg.ssim_tol
        for a, b in zip(recent, recent[1:])
    )


def defend(
    params: ModelParams,
    dataset: HazeDataset,
    cfg: DefenseConfig | None = None,
    *,
    teacher: TeacherModel | None = None,
    validation: HazeDataset | None = None,
    progress: bool = False,
) -> DefenseResult:
    """Fine-tune `params` against attacks of the kind named by ``cfg.mode``.

    Parameters
    ----------
    params : ModelParams
        The well-trained starting point; not modified.
    dataset : HazeDataset
        Training pairs.
    cfg : DefenseConfig | None
        Defaults to ``DefenseConfig()``.
    teacher : TeacherModel | None
        Frozen network supplying pseudo-labels; required for the pseudo-label mode.
    validation : HazeDataset | None
        Held-out pairs for the early-stop rule. Without it, training runs for
        ``cfg.epochs``.
    progress : bool
        Show a progress bar.
    """
    cfg = cfg or DefenseConfig()
    if cfg.mode is DefenseMode.PSEUDO_LABEL and teacher is None:
        raise ConfigError("pseudo-label defense needs a teacher model")
    if len(dataset) == 0:
        raise ConfigError("cannot fine-tune on an empty dataset")

    tensors = params.tensors(requires_grad=True)
    result = DefenseResult(
        params,
        teacher_checksum=teacher.checksum if teacher is not None else None,
        window=cfg.window,
    )
    steps_gen = rng(cfg.seed, "defense-steps")
    steps_per_epoch = math.ceil(len(dataset) / cfg.batch_size)
    bar = tqdm(total=cfg.epochs * steps_per_epoch, desc="defend", disable=not progress)

    with bar:
        for epoch in range(cfg.epochs):
            batches = dataset.batches(cfg.batch_size, rng(cfg.seed, "shuffle", epoch))
            for idx in batches:
                it = result.iterations
                hazy, clear = dataset.hazy[idx], dataset.clear[idx]
                # the label the attacked prediction is compared against
                pseudo_label = None
                if cfg.mode is DefenseMode.PSEUDO_LABEL:
                    assert teacher is not None
                    pseudo_label = teacher(hazy)
                label = clear if pseudo_label is None else pseudo_label

                for t in tensors.values():
                    t.zero_grad()
                clean_loss = restoration_loss(
                    forward(tensors, hazy), ag.Tensor(clear), cfg.distance
                )
                total = clean_loss
                adv_value = 0.0
                if cfg.lam > 0:
                    student = ModelParams.from_tensors(tensors)
                    inner = run_attack(
                        student,
                        hazy,
                        cfg.attack_config(cfg.inner_steps(steps_gen)),
                        clear,
                        gen=rng(cfg.seed, "defense-delta", it),
                        pseudo_label=pseudo_label,
                    )
                    adv_loss = restoration_loss(
                        forward(tensors, inner.adversarial),
                        ag.Tensor(label),
                        cfg.distance,
                    )
                    adv_value = adv_loss.item()
                    total = clean_loss + adv_loss * cfg.lam

                value = total.item()
                if not math.isfinite(value):
                    raise DivergenceError(
                        f"defense loss became {value} at iteration {it}"
                    )
                ag.backward(total)
                sgd_step(tensors, cfg.lr)
                result.iterations += 1
                result.losses.append(value)
                result.clean_losses.append(clean_loss.item())
                result.adversarial_losses.append(adv_value)
                bar.update()

                if result.iterations % cfg.window:
                    continue
                window_mean = float(np.mean(result.losses[-cfg.window :]))
                result.curve.append(window_mean)
                msg = f"window {len(result.curve)}: mean loss {window_mean:.6f}"
                if validation is not None:
                    point = _validate(
                        ModelParams.from_tensors(tensors),
                        validation,
                        cfg,
                        len(result.curve),
                        result.iterations,
                    )
                    result.validation.append(point)
                    msg += f", attacked val PSNR {point.psnr_db:.2f} dB"
                logger.info(msg)
                if cfg.early_stop and _is_stable(result.validation, cfg):
                    logger.warning(
                        f"early stop after {result.iterations} iterations: attacked "
                        f"validation metrics stable for {cfg.patience} windows"
                    )
                    result.stopped_early = True
                    break
            if result.stopped_early:
                break

    if teacher is not None:
        teacher.verify()
    result.params = ModelParams.from_tensors(tensors)
    return result


def defend_P(  # noqa: N802
    student: ModelParams,
    teacher: TeacherModel,
    dataset: HazeDataset,
    cfg: DefenseConfig | None = None,
    **kwargs: Any,
) -> DefenseResult:
    """Teacher-guided defense: attacked predictions are pulled to ``teacher(I)``."""
    cfg = replace(cfg or DefenseConfig(), mode=DefenseMode.PSEUDO_LABEL)
    return defend(student, dataset, cfg, teacher=teacher, **kwargs)


def defend_G(  # noqa: N802
    student: ModelParams,
    dataset: HazeDataset,
    cfg: DefenseConfig | None = None,
    **kwargs: Any,
) -> DefenseResult:
    """Ground-truth-guided defense: attacked predictions are pulled to ``J``."""
    cfg = replace(cfg or DefenseConfig(), mode=DefenseMode.GROUND_TRUTH)
    return defend(student, dataset, cfg, **kwargs)
