from __future__ import annotations

import csv
from typing import TYPE_CHECKING, Any

import numpy as np
import pytest

from dehazeguard._errors import ConfigError, ContractError
from dehazeguard.attack import AttackKind, attack_dataset, run_attack
from dehazeguard.defense import (
    DEFAULT_EPSILONS,
    MULTI_STEP_CHOICES,
    DefenseConfig,
    DefenseMode,
    DefenseReport,
    ValidationPoint,
    defend,
    defend_G,
    defend_P,
    evaluate_defense,
    format_ab_table,
)
from dehazeguard.defense import _evaluate, _trainer
from dehazeguard.defense._trainer import _is_stable
from dehazeguard.model import TeacherModel
from dehazeguard.util import rng

if TYPE_CHECKING:
    from pathlib import Path

    from dehazeguard import HazeDataset
    from dehazeguard.attack import AttackResult
    from dehazeguard.model import ModelParams


def _quick(**changes: object) -> DefenseConfig:
    settings: dict = {"epochs": 1, "batch_size": 3, "steps": 1, "window": 1}
    settings.update(changes)
    return DefenseConfig(**settings)


@pytest.mark.parametrize(
    "kwargs",
    [
        {"lam": -1.0},
        {"alpha": 0.0},
        {"epsilon": 2.0},
        {"steps": ()},
        {"steps": -1},
        {"window": 0},
        {"patience": 0},
        {"batch_size": 0},
        {"mode": "M"},
    ],
)
def test_config_validation(kwargs: dict) -> None:
    with pytest.raises(ValueError):
        DefenseConfig(**kwargs)


def test_config_attack_settings() -> None:
    cfg = DefenseConfig(mode="G", steps=[20, 25, 30], epsilon=4 / 255)
    assert cfg.mode is DefenseMode.GROUND_TRUTH
    assert cfg.step_choices == MULTI_STEP_CHOICES
    gen = rng(0, "defense-steps")
    assert {cfg.inner_steps(gen) for _ in range(50)} == set(MULTI_STEP_CHOICES)

    attack = cfg.attack_config(steps=25)
    assert attack.kind is AttackKind.GROUND_TRUTH
    assert attack.steps == 25
    assert attack.epsilon == 4 / 255
    assert DefenseConfig().attack_config().kind is AttackKind.PSEUDO_LABEL
    assert DefenseConfig().as_dict()["steps"] == [10]


def test_pseudo_label_mode_needs_teacher(
    trained_params: ModelParams, tiny_dataset: HazeDataset
) -> None:
    with pytest.raises(ConfigError, match="teacher"):
        defend(trained_params, tiny_dataset, _quick(mode="P"))


def test_zero_lambda_makes_modes_identical(
    trained_params: ModelParams, tiny_dataset: HazeDataset
) -> None:
    teacher = TeacherModel.freeze(trained_params)
    cfg = _quick(lam=0.0, epochs=2)
    with_teacher = defend_P(trained_params, teacher, tiny_dataset, cfg)
    with_clear = defend_G(trained_params, tiny_dataset, cfg)
    assert with_teacher.params.equals(with_clear.params)
    assert with_teacher.losses == with_clear.losses
    assert with_teacher.adversarial_losses == [0.0] * 4


@pytest.mark.parametrize("mode", ["P", "G"])
def test_defense_run(
    tmp_path: Path, trained_params: ModelParams, tiny_dataset: HazeDataset, mode: str
) -> None:
    teacher = TeacherModel.freeze(trained_params)
    result = defend(trained_params, tiny_dataset, _quick(mode=mode), teacher=teacher)
    assert result.iterations == 2
    assert len(result.losses) == len(result.curve) == 2
    assert all(v > 0 for v in result.adversarial_losses)
    for total, clean, adv in zip(
        result.losses, result.clean_losses, result.adversarial_losses
    ):
        assert total == pytest.approx(clean + adv, rel=1e-5)
    assert not result.params.equals(trained_params)
    assert not result.stopped_early
    # the teacher and the starting point are untouched
    teacher.verify()
    assert result.teacher_checksum == teacher.checksum
    assert teacher.checksum == trained_params.checksum()

    path = result.curve_to_csv(tmp_path / "curve.csv")
    with path.open() as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["window", "iteration", "loss", "clean_loss", "adversarial_loss"]
    assert [r[1] for r in rows[1:]] == ["1", "2"]
    assert result.summary()["windows"] == 2


def test_defense_is_deterministic(
    trained_params: ModelParams, tiny_dataset: HazeDataset
) -> None:
    cfg = _quick(mode="G", steps=(1, 2))
    a = defend(trained_params, tiny_dataset, cfg)
    b = defend(trained_params, tiny_dataset, cfg)
    assert a.params.equals(b.params)
    assert a.losses == b.losses


def test_early_stop(trained_params: ModelParams, tiny_dataset: HazeDataset) -> None:
    validation = tiny_dataset.subset([0, 1])
    loose = {"psnr_tol": 1e9, "ssim_tol": 1e9, "patience": 1, "min_windows": 2}
    cfg = _quick(mode="G", epochs=3, **loose)
    result = defend(trained_params, tiny_dataset, cfg, validation=validation)
    assert result.stopped_early
    assert result.iterations == 2
    assert [v.window for v in result.validation] == [1, 2]

    cfg = _quick(mode="G", epochs=2, early_stop=False, **loose)
    result = defend(trained_params, tiny_dataset, cfg, validation=validation)
    assert not result.stopped_early
    assert result.iterations == 4
    assert len(result.validation) == 4


def _point(i: int, psnr_db: float, ssim: float = 0.8) -> ValidationPoint:
    return ValidationPoint(i, i * 50, psnr_db, ssim, 25.0)


def test_stability_rule() -> None:
    cfg = DefenseConfig(patience=2, min_windows=3, psnr_tol=0.05, ssim_tol=0.002)
    flat = [_point(i, 20.0 + 0.01 * i) for i in range(3)]
    assert _is_stable(flat, cfg)
    assert not _is_stable(flat[:2], cfg)
    moving = [_point(0, 18.0), _point(1, 20.0), _point(2, 20.01)]
    assert not _is_stable(moving, cfg)
    # one recent jump in SSIM resets the count
    jumpy = [*flat, _point(3, 20.04, ssim=0.81)]
    assert not _is_stable(jumpy, cfg)


def test_evaluate_identical_checkpoints(
    trained_params: ModelParams, tiny_dataset: HazeDataset
) -> None:
    data = tiny_dataset.subset([0, 1, 2])
    report = evaluate_defense(trained_params, trained_params, data, steps=1)
    assert len(report) == 22
    assert len(report.settings()) == 11
    assert report.settings()[0] == ("clean", 0.0)
    for kind, eps in report.settings():
        after = report.lookup("after", kind, eps)
        before = report.lookup("before", kind, eps)
        assert (after.psnr_db, after.ssim) == (before.psnr_db, before.ssim)

    clean = report.lookup("before", "clean")
    for kind in "PG":
        zero = report.lookup("before", kind, 0.0)
        assert zero.psnr_db == pytest.approx(clean.psnr_db, abs=1e-4)
    assert report.lookup("before", "G", 8 / 255).psnr_db < clean.psnr_db
    with pytest.raises(KeyError):
        report.lookup("after", "M", 0.0)


def test_defense_report_files(
    tmp_path: Path, trained_params: ModelParams, tiny_dataset: HazeDataset
) -> None:
    data = tiny_dataset.subset([0, 1])
    epsilons = DEFAULT_EPSILONS[::2]
    report = evaluate_defense(
        trained_params, trained_params, data, epsilons=epsilons, kinds=["G"], steps=1
    )
    assert len(report) == 2 * (len(epsilons) + 1)

    loaded = DefenseReport.from_csv(report.to_csv(tmp_path / "ab.csv"))
    assert [(r.checkpoint, r.kind) for r in loaded.rows] == [
        (r.checkpoint, r.kind) for r in report.rows
    ]
    np.testing.assert_allclose(
        [r.psnr_db for r in loaded.rows], [r.psnr_db for r in report.rows], rtol=1e-8
    )

    table = format_ab_table(report).splitlines()
    assert "after/before" in table[0]
    assert len(table) == 1 + len(report.settings())
    assert table[1].startswith("clean")
    assert table[-1].split()[:2] == ["G", "8"]


@pytest.mark.parametrize("mode", ["P", "G"])
def test_inner_attack_stays_within_budget(
    monkeypatch: pytest.MonkeyPatch,
    trained_params: ModelParams,
    tiny_dataset: HazeDataset,
    mode: str,
) -> None:
    seen = []

    def recording_attack(*args: Any, **kwargs: Any) -> AttackResult:
        result = run_attack(*args, **kwargs)
        seen.append((args[1], result))
        return result

    monkeypatch.setattr(_trainer, "run_attack", recording_attack)
    cfg = _quick(mode=mode, epsilon=4 / 255)
    teacher = TeacherModel.freeze(trained_params)
    defend(trained_params, tiny_dataset, cfg, teacher=teacher)
    assert len(seen) == 2
    for hazy, result in seen:
        assert result.linf <= cfg.epsilon + 1e-6
        assert result.adversarial.min() >= 0 and result.adversarial.max() <= 1
        assert np.max(np.abs(result.adversarial - hazy)) <= cfg.epsilon + 1e-6


def test_evaluate_records_checksums(
    params: ModelParams, trained_params: ModelParams, tiny_dataset: HazeDataset
) -> None:
    data = tiny_dataset.subset([0])
    teacher = TeacherModel.freeze(params)
    report = evaluate_defense(
        params,
        trained_params,
        data,
        epsilons=[4 / 255],
        kinds=["P"],
        steps=1,
        teacher=teacher,
    )
    assert report.checksums == {
        "before": params.checksum(),
        "after": trained_params.checksum(),
    }


def test_evaluate_rejects_a_changing_checkpoint(
    monkeypatch: pytest.MonkeyPatch,
    trained_params: ModelParams,
    tiny_dataset: HazeDataset,
) -> None:
    after = trained_params.copy()

    def drifting_attack(params: ModelParams, *args: Any, **kwargs: Any) -> Any:
        if params is after:
            after.arrays["conv5.bias"] += 0.01
        return attack_dataset(params, *args, **kwargs)

    monkeypatch.setattr(_evaluate, "attack_dataset", drifting_attack)
    data = tiny_dataset.subset([0])
    with pytest.raises(ContractError, match="after checkpoint changed"):
        evaluate_defense(
            trained_params, after, data, epsilons=[4 / 255], kinds=["G"], steps=1
        )


def test_evaluate_rejects_a_changed_teacher(
    params: ModelParams, tiny_dataset: HazeDataset
) -> None:
    teacher = TeacherModel.freeze(params)
    object.__setattr__(teacher, "checksum", "0" * 64)
    with pytest.raises(ContractError, match="teacher"):
        evaluate_defense(
            params,
            params,
            tiny_dataset.subset([0]),
            epsilons=[0.0],
            kinds=["P"],
            teacher=teacher,
        )
