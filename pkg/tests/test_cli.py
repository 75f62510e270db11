from __future__ import annotations

import csv
import json
from typing import TYPE_CHECKING

import pytest

from dehazeguard import init_params, load_checkpoint, read_dataset, save_checkpoint
from dehazeguard.cli import RunConfig, build_parser, main, read_config_file

if TYPE_CHECKING:
    from pathlib import Path

    from dehazeguard.model import ModelParams


def _manifest(out: Path) -> dict:
    return json.loads((out / "manifest.json").read_text())


def _rows(path: Path) -> list[dict[str, str]]:
    with path.open(newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture
def model_file(tmp_path: Path, trained_params: ModelParams) -> Path:
    return save_checkpoint(tmp_path / "trained" / "model.hzck", trained_params)


def test_gen(tmp_path: Path) -> None:
    out = tmp_path / "gen"
    argv = ["gen", "--count", "3", "--size", "16", "--seed", "7", "--out", str(out)]
    assert main(argv) == 0
    dataset = read_dataset(out / "dataset.hzds")
    assert len(dataset) == 3
    assert dataset.image_shape == (3, 16, 16)

    manifest = _manifest(out)
    assert manifest["run"]["seed"] == 7
    assert manifest["run"]["options"]["count"] == 3
    assert "dataset.hzds" in manifest["outputs"]

    # same seed, same bytes
    first = (out / "dataset.hzds").read_bytes()
    assert main([*argv[:-1], str(tmp_path / "again")]) == 0
    assert (tmp_path / "again" / "dataset.hzds").read_bytes() == first


def test_config_file_layers(tmp_path: Path) -> None:
    config = tmp_path / "gen.cfg"
    config.write_text(
        f"# small run\ncount = 2\nsize=16   # pixels\nout = {tmp_path / 'from_file'}\n"
    )
    assert main(["gen", "--config", str(config)]) == 0
    assert len(read_dataset(tmp_path / "from_file" / "dataset.hzds")) == 2

    out = tmp_path / "flag_wins"
    argv = ["gen", "--config", str(config), "--count", "4", "--out", str(out)]
    assert main(argv) == 0
    assert len(read_dataset(out / "dataset.hzds")) == 4
    assert _manifest(out)["run"]["config_file"] == str(config)


def test_read_config_file(tmp_path: Path) -> None:
    config = tmp_path / "run.cfg"
    config.write_text("--eps-list = 0,8\n\nno_early_stop = true\n")
    assert read_config_file(config) == {"eps_list": "0,8", "no_early_stop": "true"}


@pytest.mark.parametrize(
    "text", ["colour = blue\n", "count = many\n", "just words\n", "distance = l1\n"]
)
def test_bad_config_file(tmp_path: Path, text: str) -> None:
    config = tmp_path / "bad.cfg"
    config.write_text(text)
    assert main(["gen", "--config", str(config), "--out", str(tmp_path / "x")]) == 2


def test_usage_errors(tmp_path: Path, dataset_file: Path) -> None:
    assert main(["gen", "--count", "3"]) == 2
    assert main([]) == 2
    assert main(["paint", "--out", str(tmp_path)]) == 2
    out = str(tmp_path / "out")
    bad_kind = ["attack", "--model", "m", "--data", "d", "--kind", "Z"]
    assert main([*bad_kind, "--out", out]) == 2
    # invalid values are rejected before any work is done
    argv = ["train", "--data", str(dataset_file), "--out", out]
    assert main([*argv, "--lr", "-1"]) == 2
    assert main([*argv, "--val", "6"]) == 2
    assert main([*argv, "--seed", "-3"]) == 2
    assert not (tmp_path / "out" / "manifest.json").exists()


def test_runtime_failure(tmp_path: Path) -> None:
    out = tmp_path / "out"
    argv = ["train", "--data", str(tmp_path / "missing.hzds"), "--out", str(out)]
    assert main(argv) == 1
    assert not (out / "manifest.json").exists()


def test_train(tmp_path: Path, dataset_file: Path) -> None:
    out = tmp_path / "train"
    argv = ["train", "--data", str(dataset_file), "--out", str(out), "--seed", "2"]
    assert main([*argv, "--epochs", "0", "--val", "2"]) == 0
    assert load_checkpoint(out / "model.hzck").equals(init_params(2))
    manifest = _manifest(out)
    assert manifest["steps"] == 0
    assert manifest["validation"]["count"] == 2

    assert main([*argv, "--epochs", "1", "--batch", "2", "--val", "0"]) == 0
    manifest = _manifest(out)
    assert manifest["steps"] == 3
    assert "validation" not in manifest
    assert len(_rows(out / "losses.csv")) == 3
    assert manifest["model_checksum"] == load_checkpoint(out / "model.hzck").checksum()


def test_attack(tmp_path: Path, dataset_file: Path, model_file: Path) -> None:
    out = tmp_path / "attack"
    argv = [
        "attack",
        "--model", str(model_file),
        "--data", str(dataset_file),
        "--out", str(out),
        "--kind", "m",
        "--eps-list", "0,8",
        "--steps", "1,2",
        "--dump-images", "1",
    ]  # fmt: skip
    assert main(argv) == 0
    metrics = _rows(out / "metrics.csv")
    assert len(metrics) == 2 * 2 * 6
    assert {r["attack_kind"] for r in metrics} == {"M"}
    summary = _rows(out / "summary.csv")
    settings = [(r["epsilon"], r["steps"]) for r in summary]
    assert settings[:2] == [("0", "1"), ("0.03137254902", "1")]
    # eps 0 runs no steps
    assert len(_rows(out / "loss_trace.csv")) == (1 + 2) * 6
    assert (out / "mscn_clean.csv").is_file()
    assert (out / "mscn_eps8_k2.csv").is_file()
    assert (out / "images" / "eps8_k1" / "0000_adversarial.png").is_file()

    manifest = _manifest(out)
    assert manifest["images"] == 6
    assert manifest["backward_passes"] == (1 + 2) * 6
    assert manifest["model_checksum"] == load_checkpoint(model_file).checksum()


def test_attack_outputs_are_byte_identical(
    tmp_path: Path, dataset_file: Path, model_file: Path
) -> None:
    argv = ["attack", "--model", str(model_file), "--data", str(dataset_file)]
    argv += ["--eps-list", "8", "--steps", "2", "--val", "2", "--seed", "5"]
    argv += ["--dump-images", "1", "--image-format", "ppm"]
    first, second = tmp_path / "first", tmp_path / "second"
    assert main([*argv, "--out", str(first)]) == 0
    assert main([*argv, "--out", str(second), "--jobs", "2"]) == 0
    for name in ("metrics.csv", "summary.csv", "loss_trace.csv", "mscn_eps8_k2.csv"):
        assert (first / name).read_bytes() == (second / name).read_bytes()

    images = first / "images" / "eps8_k2"
    assert sorted(p.name for p in images.iterdir()) == [
        "0004_adversarial.ppm",
        "0004_prediction.ppm",
    ]
    assert (images / "0004_adversarial.ppm").read_bytes().startswith(b"P6")
    assert (images / "0004_adversarial.ppm").read_bytes() == (
        second / "images" / "eps8_k2" / "0004_adversarial.ppm"
    ).read_bytes()
    assert main([*argv[:-2], "--image-format", "tiff", "--out", str(first)]) == 2


def test_noise_attack_runs_no_backward(
    tmp_path: Path, dataset_file: Path, model_file: Path
) -> None:
    out = tmp_path / "noise"
    argv = ["attack", "--model", str(model_file), "--data", str(dataset_file)]
    assert main([*argv, "--kind", "N", "--out", str(out)]) == 0
    manifest = _manifest(out)
    assert manifest["backward_passes"] == 0
    # one row per image for each of the five default budgets
    assert len(_rows(out / "metrics.csv")) == 5 * 6
    assert {r["steps"] for r in _rows(out / "metrics.csv")} == {"0"}


def test_defend(tmp_path: Path, dataset_file: Path, model_file: Path) -> None:
    out = tmp_path / "defend"
    argv = [
        "defend",
        "--model", str(model_file),
        "--data", str(dataset_file),
        "--out", str(out),
        "--mode", "g",
        "--epochs", "1",
        "--batch", "2",
        "--val", "2",
        "--steps", "1",
        "--window", "1",
        "--eval-eps", "0,8",
        "--eval-steps", "1",
    ]  # fmt: skip
    assert main(argv) == 0
    defended = load_checkpoint(out / "defended.hzck")
    assert not defended.equals(load_checkpoint(model_file))

    ab = _rows(out / "ab_report.csv")
    assert len(ab) == 2 * (2 * 2 + 1)
    assert {r["checkpoint"] for r in ab} == {"before", "after"}
    assert len(_rows(out / "curve.csv")) == 2
    assert len(_rows(out / "validation.csv")) == 2
    assert "after/before" in (out / "ab_report.txt").read_text()

    manifest = _manifest(out)
    assert manifest["iterations"] == 2
    assert manifest["defense_config"]["mode"] == "G"
    assert manifest["student_checksum"] == defended.checksum()
    assert manifest["teacher_checksum"] is None


def test_defend_pseudo_label_uses_teacher(
    tmp_path: Path, dataset_file: Path, model_file: Path
) -> None:
    out = tmp_path / "defend_p"
    argv = [
        "defend",
        "--model", str(model_file),
        "--data", str(dataset_file),
        "--out", str(out),
        "--epochs", "1",
        "--batch", "4",
        "--val", "2",
        "--steps", "1",
        "--window", "1",
        "--eval-eps", "8",
        "--eval-kinds", "p",
        "--eval-steps", "1",
    ]  # fmt: skip
    assert main(argv) == 0
    manifest = _manifest(out)
    assert manifest["teacher_checksum"] == load_checkpoint(model_file).checksum()
    assert len(_rows(out / "ab_report.csv")) == 2 * (1 + 1)


def test_report(tmp_path: Path, dataset_file: Path, model_file: Path) -> None:
    runs = []
    for kind in ("P", "N"):
        out = tmp_path / f"attack_{kind}"
        argv = ["attack", "--model", str(model_file), "--data", str(dataset_file)]
        argv += ["--kind", kind, "--eps-list", "4,8", "--steps", "1", "--val", "3"]
        assert main([*argv, "--out", str(out)]) == 0
        runs.append(str(out))

    out = tmp_path / "report"
    assert main(["report", "--runs", *runs, "--out", str(out)]) == 0
    merged = _rows(out / "merged_metrics.csv")
    assert len(merged) == 2 * 2 * 3
    assert {r["run"] for r in merged} == {"attack_P", "attack_N"}
    comparison = _rows(out / "comparison.csv")
    assert len(comparison) == 4
    for row in comparison:
        assert float(row["input_psnr_db"]) > 0
        if float(row["epsilon"]) == pytest.approx(8 / 255):
            # the budget keeps the input above 30 dB while the output falls below it
            assert float(row["input_psnr_db"]) >= 30
            assert float(row["input_psnr_db"]) > float(row["output_psnr_db"])
    series = {r["series"] for r in _rows(out / "mscn_histograms.csv")}
    assert {"clean", "eps4_k1", "eps8_k1", "eps8_k0"} <= series
    assert _manifest(out)["rows"] == 12

    config = tmp_path / "report.cfg"
    config.write_text(f"runs = {runs[0]} {runs[1]}\n")
    from_file = tmp_path / "report_from_file"
    assert main(["report", "--config", str(config), "--out", str(from_file)]) == 0
    assert (from_file / "comparison.csv").read_bytes() == (
        out / "comparison.csv"
    ).read_bytes()

    # a directory that is not an attack run
    assert main(["report", "--runs", str(tmp_path), "--out", str(out)]) == 2


def test_run_config(tmp_path: Path) -> None:
    parser, commands = build_parser()
    assert set(commands) == {"gen", "train", "attack", "defend", "report"}
    args = parser.parse_args(["gen", "--out", str(tmp_path), "-vv"])
    run = RunConfig.from_args(args)
    assert run.command == "gen"
    assert run.options == {"count": 512, "jobs": 1, "size": 32}
    assert run.as_dict()["config_file"] is None
