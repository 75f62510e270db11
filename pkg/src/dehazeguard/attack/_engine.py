"""Iterative sign-gradient attacks on the dehazing network."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from itertools import repeat
from typing import TYPE_CHECKING

import numpy as np
from tqdm import tqdm

from dehazeguard import autograd as ag
from dehazeguard._errors import ConfigError, ContractError, ShapeError
from dehazeguard.metrics import DEFAULT_SSIM, ImageRecord, MetricsReport, psnr, ssim
from dehazeguard.model import forward, predict
from dehazeguard.util import rng

from ._config import AttackConfig, AttackKind, AttackResult, AttackTargets
from ._objectives import AttackObjective, compute_haze_mask

if TYPE_CHECKING:
    from typing import Sequence

    from dehazeguard._dataset import HazeDataset
    from dehazeguard.metrics import SsimConfig
    from dehazeguard.model import ModelParams

__all__ = [
    "attack_dataset",
    "attack_report",
    "clip_to_image",
    "init_delta",
    "pgd_step",
    "run_attack",
]

logger = logging.getLogger(__name__)


def clip_to_image(delta: np.ndarray, hazy: np.ndarray) -> np.ndarray:
    """Clip `delta` into ``[-I, 1 - I]`` so that ``I + delta`` stays in [0, 1]."""
    hazy64 = hazy.astype(np.float64)
    return np.clip(delta, -hazy64, 1.0 - hazy64)


def init_delta(
    hazy: np.ndarray, epsilon: float, gen: np.random.Generator | int
) -> np.ndarray:
    """Uniform ``U(-epsilon, epsilon)`` start, clipped to the valid image range.

    ``epsilon == 0`` returns exact zeros without drawing from `gen`.
    """
    if epsilon < 0:
        raise ConfigError(f"epsilon must be >= 0, got {epsilon}")
    if epsilon == 0:
        return np.zeros(hazy.shape, dtype=np.float32)
    if not isinstance(gen, np.random.Generator):
        gen = np.random.default_rng(gen)
    delta = gen.uniform(-epsilon, epsilon, size=hazy.shape)
    return clip_to_image(delta, hazy).astype(np.float32)


def pgd_step(
    delta: np.ndarray,
    grad: np.ndarray,
    alpha: float,
    epsilon: float,
    hazy: np.ndarray,
) -> np.ndarray:
    """One ascent step ``delta + alpha * sign(grad)``, then the two clips.

    The budget clip to ``[-epsilon, epsilon]`` comes first, the image-range clip to
    ``[-I, 1 - I]`` second. ``sign(0) == 0``.
    """
    if not delta.shape == grad.shape == hazy.shape:
        raise ShapeError(
            f"pgd_step shapes differ: {delta.shape}, {grad.shape}, {hazy.shape}"
        )
    step = delta.astype(np.float64) + alpha * np.sign(grad)
    step = np.clip(step, -epsilon, epsilon)
    return clip_to_image(step, hazy).astype(delta.dtype)


def _batch(image: np.ndarray | None) -> np.ndarray | None:
    if image is None:
        return None
    image = np.asarray(image, dtype=np.float32)
    return image[None] if image.ndim == 3 else image


def run_attack(
    params: ModelParams,
    hazy: np.ndarray,
    cfg: AttackConfig,
    clear: np.ndarray | None = None,
    *,
    gen: np.random.Generator | None = None,
    pseudo_label: np.ndarray | None = None,
    ssim_cfg: SsimConfig = DEFAULT_SSIM,
) -> AttackResult:
    """Attack `params` on a ``(3, H, W)`` image or a ``(N, 3, H, W)`` batch.

    Parameters
    ----------
    params : ModelParams
        The attacked network; never modified.
    hazy : np.ndarray
        Clean hazy input.
    cfg : AttackConfig
        Kind, distance, budget, step size and step count.
    clear : np.ndarray | None
        Ground truth, required by the ground-truth attack.
    gen : np.random.Generator | None
        Stream for the initial perturbation; defaults to the ``"attack"`` stream of
        ``cfg.seed``.
    pseudo_label : np.ndarray | None
        Raw target for the pseudo-label and masked attacks. Defaults to the
        network's own prediction on the clean input, computed once.
    ssim_cfg : SsimConfig
        Window settings for the SSIM distance.

    Returns
    -------
    AttackResult
        Arrays have the shape of `hazy`.
    """
    single = np.ndim(hazy) == 3
    batch = _batch(hazy)
    assert batch is not None
    if batch.ndim != 4 or batch.shape[1] != 3:
        raise ShapeError(f"attack expects (3, H, W) or (N, 3, H, W), got {batch.shape}")
    checksum = params.checksum()
    weights = params.tensors()

    clean_raw = predict(weights, batch, clamp=False)
    clean = np.clip(clean_raw, 0, 1)
    targets = AttackTargets(
        hazy=batch,
        prediction=clean_raw if pseudo_label is None else _batch(pseudo_label),
        clear=_batch(clear),
    )
    if cfg.kind is AttackKind.MASKED:
        targets.mask = compute_haze_mask(batch, clean)

    if gen is None:
        gen = rng(cfg.seed, "attack")
    delta = init_delta(batch, cfg.epsilon, gen)
    losses: list[float] = []
    if cfg.kind.uses_gradients and cfg.epsilon > 0:
        objective = AttackObjective.for_kind(cfg.kind)
        objective.check(targets)
        x = ag.Tensor(batch)
        for _ in range(cfg.steps):
            d = ag.Tensor(delta, requires_grad=True)
            prediction = forward(weights, objective.perturb(x, d, targets))
            loss = objective.loss(prediction, targets, cfg.distance, ssim_cfg)
            ag.backward(loss)
            losses.append(loss.item())
            assert d.grad is not None
            delta = pgd_step(delta, d.grad, cfg.alpha, cfg.epsilon, batch)

    if targets.mask is not None:
        delta = delta * targets.mask
    adversarial = np.clip(batch + delta, 0, 1).astype(np.float32)
    result = AttackResult(
        delta=delta,
        adversarial=adversarial,
        prediction=predict(weights, adversarial),
        clean_prediction=clean,
        losses=losses,
        mask=targets.mask,
        model_checksum=checksum,
    )
    if params.checksum() != checksum:
        raise ContractError("attack modified the network parameters")
    if single:
        result.delta = result.delta[0]
        result.adversarial = result.adversarial[0]
        result.prediction = result.prediction[0]
        result.clean_prediction = result.clean_prediction[0]
        if result.mask is not None:
            result.mask = result.mask[0]
    return result


def _attack_one(
    index: int, params: ModelParams, dataset: HazeDataset, cfg: AttackConfig
) -> AttackResult:
    return run_attack(
        params,
        dataset.hazy[index],
        cfg,
        dataset.clear[index],
        gen=rng(cfg.seed, "attack", index),
    )


def attack_dataset(
    params: ModelParams,
    dataset: HazeDataset,
    cfg: AttackConfig,
    *,
    indices: Sequence[int] | None = None,
    jobs: int = 1,
    progress: bool = False,
) -> list[AttackResult]:
    """Attack every image (or those at `indices`) independently, in order.

    Image ``i`` draws its initial perturbation from the ``("attack", i)`` stream of
    ``cfg.seed``, so results do not depend on `jobs`.
    """
    order = list(range(len(dataset))) if indices is None else list(indices)
    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        results = list(
            tqdm(
                pool.map(
                    _attack_one, order, repeat(params), repeat(dataset), repeat(cfg)
                ),
                total=len(order),
                desc=f"attack {cfg.kind} eps={cfg.epsilon * 255:g}/255",
                disable=not progress,
            )
        )
    logger.info(
        f"attacked {len(order)} images: kind {cfg.kind}, distance {cfg.distance}, "
        f"eps {cfg.epsilon:.5f}, steps {cfg.steps}"
    )
    return results


def attack_report(
    results: Sequence[AttackResult],
    dataset: HazeDataset,
    cfg: AttackConfig,
    *,
    indices: Sequence[int] | None = None,
    ssim_cfg: SsimConfig = DEFAULT_SSIM,
) -> MetricsReport:
    """Per-image metrics of attacked predictions against ``J``.

    The ``input_*`` columns compare each attacked input with its clean input. The
    provenance records the attack settings and the checksum of the attacked model.

    Raises
    ------
    ContractError
        If `results` come from more than one model.
    """
    checksums = sorted({r.model_checksum for r in results})
    if len(checksums) > 1:
        raise ContractError(f"results come from {len(checksums)} different models")
    order = list(range(len(dataset))) if indices is None else list(indices)
    records = [
        ImageRecord.measure(
            i,
            result.prediction,
            dataset.clear[i],
            ssim_cfg,
            epsilon=cfg.epsilon,
            attack_kind=str(cfg.kind),
            steps=cfg.steps if cfg.kind.uses_gradients else 0,
            input_psnr_db=psnr(result.adversarial, dataset.hazy[i]),
            input_ssim=ssim(result.adversarial, dataset.hazy[i], ssim_cfg),
        )
        for i, result in zip(order, results)
    ]
    provenance = {
        "attack": cfg.as_dict(),
        "model_checksum": checksums[0] if checksums else "",
    }
    return MetricsReport(records, provenance)
