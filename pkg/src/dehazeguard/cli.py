"""Command line entry point: ``dehazeguard {gen,train,attack,defend,report}``.

Every subcommand writes its artifacts into ``--out`` and finishes by writing
``manifest.json`` there, holding the fully resolved configuration. Settings are
resolved in three layers: built-in defaults, then ``--config FILE`` (``key = value``
lines), then explicit flags.
"""

from __future__ import annotations

import argparse
import csv
import logging
import shlex
import sys
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np

from . import __version__
from ._dataset import HazeDataset, read_dataset
from ._errors import ConfigError
from .attack import AttackConfig, AttackKind, attack_dataset, attack_report
from .autograd import backward_calls
from .data import gen_dataset
from .defense import (
    MULTI_STEP_CHOICES,
    DefenseConfig,
    DefenseMode,
    defend,
    evaluate_defense,
    format_ab_table,
)
from .metrics import (
    CSV_FIELDS,
    Distance,
    MetricsReport,
    histogram,
    mean_histogram,
    mscn,
    psnr,
    write_histogram_csv,
)
from .model import (
    TeacherModel,
    TrainConfig,
    evaluate,
    init_params,
    load_checkpoint,
    save_checkpoint,
    train,
)
from .util import save_image, write_csv, write_json

if TYPE_CHECKING:
    from typing import Any, Callable, Sequence

    from .attack import AttackResult

__all__ = ["RunConfig", "main"]

logger = logging.getLogger("dehazeguard")

DATASET_NAME = "dataset.hzds"
MODEL_NAME = "model.hzck"
DEFENDED_NAME = "defended.hzck"
MANIFEST_NAME = "manifest.json"
METRICS_NAME = "metrics.csv"


@dataclass(frozen=True)
class RunConfig:
    """The resolved settings of one CLI run, as recorded in its manifest."""

    command: str
    out: Path
    seed: int
    options: dict[str, Any] = field(default_factory=dict)
    config_file: Path | None = None

    def __post_init__(self) -> None:
        if self.seed < 0:
            raise ConfigError(f"seed must be >= 0, got {self.seed}")

    @classmethod
    def from_args(cls, args: argparse.Namespace) -> RunConfig:
        """Collect the parsed flags of one subcommand."""
        skip = {"func", "command", "out", "seed", "config", "verbose", "quiet"}
        options = {k: v for k, v in sorted(vars(args).items()) if k not in skip}
        config = Path(args.config) if args.config else None
        return cls(args.command, Path(args.out), args.seed, options, config)

    def as_dict(self) -> dict[str, Any]:
        """JSON-ready form for the manifest."""
        return {
            "command": self.command,
            "out": str(self.out),
            "seed": self.seed,
            "options": self.options,
            "config_file": str(self.config_file) if self.config_file else None,
        }


# ------------------- argument helpers -------------------


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError as e:
        msg = f"expected comma separated integers: {text}"
        raise argparse.ArgumentTypeError(msg) from e


def _float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as e:
        msg = f"expected comma separated numbers: {text}"
        raise argparse.ArgumentTypeError(msg) from e


def _kind_list(text: str) -> list[str]:
    kinds = [v.strip().upper() for v in text.split(",") if v.strip()]
    for kind in kinds:
        if kind not in {k.value for k in AttackKind}:
            raise argparse.ArgumentTypeError(f"unknown attack kind {kind!r}")
    return kinds


def _bool(text: str) -> bool:
    value = text.strip().lower()
    if value in {"1", "true", "yes", "on"}:
        return True
    if value in {"0", "false", "no", "off"}:
        return False
    raise ConfigError(f"expected a boolean, got {text!r}")


def _levels(values: Sequence[float], raw: bool) -> list[float]:
    """Convert budget/step values given as numerators over 255 to image units."""
    return [float(v) if raw else float(v) / 255 for v in values]


def _level_name(value: float) -> str:
    return f"{value * 255:g}".replace(".", "p")


def read_config_file(path: str | Path) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment, keys use ``-`` or ``_``."""
    values: dict[str, str] = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        values[key.strip().lstrip("-").replace("-", "_")] = value.strip()
    return values


def _config_value(action: argparse.Action, raw: str, where: str) -> Any:
    """Convert one config-file value the way the command line would."""
    if isinstance(action, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
        return _bool(raw)
    many = action.nargs in ("+", "*") or isinstance(action.nargs, int)
    items = shlex.split(raw) if many else [raw]
    if many and action.nargs == "+" and not items:
        raise ConfigError(f"{where} needs at least one value")
    convert: Callable[[str], Any] = action.type or str  # type: ignore[assignment]
    values = []
    for item in items:
        try:
            value = convert(item)
        except (argparse.ArgumentTypeError, ValueError) as e:
            raise ConfigError(f"bad value for {where}: {e}") from e
        if action.choices is not None and value not in action.choices:
            raise ConfigError(f"{where} must be one of {list(action.choices)}")
        values.append(value)
    return values if many else values[0]


def _apply_config_file(parser: argparse.ArgumentParser, path: str) -> None:
    """Install the values of a config file as `parser` defaults.

    Values of flags that take several arguments are split like a shell would.
    """
    actions = {a.dest: a for a in parser._actions}
    defaults: dict[str, Any] = {}
    for key, raw in read_config_file(path).items():
        action = actions.get(key)
        if action is None or key in {"help", "config"}:
            raise ConfigError(f"{path}: unknown setting {key!r}")
        defaults[key] = _config_value(action, raw, f"{path}: {key!r}")
        # a required flag satisfied by the file
        action.required = False
    parser.set_defaults(**defaults)


# ------------------- run bookkeeping -------------------


def _prepare_out(run: RunConfig) -> Path:
    run.out.mkdir(parents=True, exist_ok=True)
    # a stale manifest would claim outputs this run may never produce
    (run.out / MANIFEST_NAME).unlink(missing_ok=True)
    return run.out


def _finish(run: RunConfig, outputs: Sequence[Path], **extra: Any) -> None:
    manifest = {
        "dehazeguard_version": __version__,
        "run": run.as_dict(),
        "outputs": sorted(str(p.relative_to(run.out)) for p in outputs),
        **extra,
    }
    write_json(run.out / MANIFEST_NAME, manifest)


def _progress() -> bool:
    return sys.stderr.isatty()


def _split(dataset: HazeDataset, n_val: int) -> tuple[HazeDataset, HazeDataset | None]:
    if n_val <= 0:
        return dataset, None
    if n_val >= len(dataset):
        raise ConfigError(
            f"--val {n_val} leaves no training pairs out of {len(dataset)}"
        )
    return dataset.split(n_val)


# ------------------- subcommands -------------------


def cmd_gen(args: argparse.Namespace) -> int:
    """Generate a dataset file and its pair manifest."""
    run = RunConfig.from_args(args)
    out = _prepare_out(run)
    generated = gen_dataset(
        args.count, args.size, args.seed, out / DATASET_NAME, jobs=args.jobs
    )
    assert generated.path is not None and generated.manifest_path is not None
    betas = [r.beta for r in generated.records]
    print(
        f"wrote {args.count} pairs of {args.size}x{args.size} to {generated.path} "
        f"(beta {min(betas):.2f}..{max(betas):.2f})"
    )
    _finish(run, [generated.path, generated.manifest_path])
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    """Train from the seeded initialization and save the checkpoint and loss curve."""
    cfg = TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch,
        lr=args.lr,
        seed=args.seed,
        distance=Distance(args.distance),
    )
    run = RunConfig.from_args(args)
    dataset = read_dataset(args.data)
    train_set, val_set = _split(dataset, args.val)
    out = _prepare_out(run)

    result = train(
        init_params(args.seed), train_set, cfg, validation=val_set, progress=_progress()
    )
    model_path = save_checkpoint(out / MODEL_NAME, result.params)
    loss_path = result.losses_to_csv(out / "losses.csv")

    extra: dict[str, Any] = {
        "train_config": cfg.as_dict(),
        "model_checksum": result.params.checksum(),
        "steps": len(result.losses),
        "final_loss": result.losses[-1] if result.losses else None,
    }
    if val_set is not None:
        report = evaluate(result.params, val_set).aggregate()
        pairs = zip(val_set.hazy, val_set.clear)
        baseline = float(np.mean([psnr(h, c) for h, c in pairs]))
        extra["validation"] = {
            "count": len(val_set),
            "psnr_db": report["psnr_db"]["mean"],
            "ssim": report["ssim"]["mean"],
            "identity_psnr_db": baseline,
        }
        print(
            f"val PSNR {report['psnr_db']['mean']:.2f} dB "
            f"(identity {baseline:.2f} dB), SSIM {report['ssim']['mean']:.4f}"
        )
    _finish(run, [model_path, loss_path], **extra)
    return 0


def _dump_images(
    out: Path,
    results: Sequence[AttackResult],
    indices: Sequence[int],
    suffix: str = "png",
) -> list[Path]:
    paths = []
    for i, result in zip(indices, results):
        for name in ("adversarial", "prediction"):
            path = out / f"{i:04d}_{name}.{suffix}"
            paths.append(save_image(path, getattr(result, name)))
    return paths


def cmd_attack(args: argparse.Namespace) -> int:
    """Run one attack kind over every (steps, epsilon) pair of the sweep."""
    kind = AttackKind(args.kind)
    epsilons = _levels(args.eps_list, args.raw)
    alpha = _levels([args.alpha], args.raw)[0]
    steps_list = args.steps if kind.uses_gradients else [0]
    configs = [
        AttackConfig(kind, Distance(args.distance), eps, alpha, steps, args.seed)
        for steps in steps_list
        for eps in epsilons
    ]
    run = RunConfig.from_args(args)
    params = load_checkpoint(args.model)
    dataset = read_dataset(args.data)
    indices = list(range(len(dataset)))
    if args.val > 0:
        indices = indices[-args.val :]
    out = _prepare_out(run)
    outputs: list[Path] = []

    clean_hist = mean_histogram(histogram(mscn(dataset.hazy[i]))[1] for i in indices)
    centers = histogram(np.zeros(1))[0]
    outputs.append(write_histogram_csv(out / "mscn_clean.csv", centers, clean_hist))

    calls_before = backward_calls()
    reports: list[MetricsReport] = []
    trace_rows: list[tuple[Any, ...]] = []
    summary_rows: list[tuple[Any, ...]] = []
    for cfg in configs:
        results = attack_dataset(
            params, dataset, cfg, indices=indices, jobs=args.jobs, progress=_progress()
        )
        report = attack_report(results, dataset, cfg, indices=indices)
        reports.append(report)
        tag = f"eps{_level_name(cfg.epsilon)}_k{cfg.steps}"
        for i, result in zip(indices, results):
            trace_rows.extend(
                (cfg.epsilon, cfg.steps, i, t, loss)
                for t, loss in enumerate(result.losses)
            )
        adv_hist = mean_histogram(histogram(mscn(r.adversarial))[1] for r in results)
        outputs.append(write_histogram_csv(out / f"mscn_{tag}.csv", centers, adv_hist))
        if args.dump_images > 0:
            n = min(args.dump_images, len(results))
            outputs += _dump_images(
                out / "images" / tag, results[:n], indices[:n], args.image_format
            )

        stats = report.aggregate()
        summary_rows.append(
            (
                str(cfg.kind),
                str(cfg.distance),
                cfg.epsilon,
                cfg.steps,
                stats["psnr_db"]["mean"],
                stats["ssim"]["mean"],
                float(np.mean(report.column("input_psnr_db"))),
                float(np.mean(report.column("input_ssim"))),
                float(np.mean([r.mask_coverage for r in results])),
            )
        )
        print(
            f"{cfg.kind} {cfg.distance} eps={cfg.epsilon * 255:g}/255 k={cfg.steps}: "
            f"PSNR {stats['psnr_db']['mean']:.3f} dB, SSIM {stats['ssim']['mean']:.4f}"
        )

    merged = MetricsReport.merge(reports)
    outputs.append(merged.to_csv(out / METRICS_NAME))
    trace_header = ["epsilon", "steps", "id", "step", "loss"]
    outputs.append(write_csv(out / "loss_trace.csv", trace_header, trace_rows))
    outputs.append(
        write_csv(
            out / "summary.csv",
            [
                "attack_kind",
                "distance",
                "epsilon",
                "steps",
                "psnr_db",
                "ssim",
                "input_psnr_db",
                "input_ssim",
                "mask_coverage",
            ],
            summary_rows,
        )
    )
    _finish(
        run,
        outputs,
        model_checksum=params.checksum(),
        attacks=[c.as_dict() for c in configs],
        images=len(indices),
        backward_passes=backward_calls() - calls_before,
    )
    return 0


def cmd_defend(args: argparse.Namespace) -> int:
    """Adversarially fine-tune a checkpoint and compare it with the original."""
    if args.multi_step:
        steps: int | tuple[int, ...] = MULTI_STEP_CHOICES
    else:
        steps = args.steps[0] if len(args.steps) == 1 else tuple(args.steps)
    cfg = DefenseConfig(
        mode=DefenseMode(args.mode),
        lam=args.lam,
        epsilon=_levels([args.eps], args.raw)[0],
        alpha=_levels([args.alpha], args.raw)[0],
        steps=steps,
        epochs=args.epochs,
        batch_size=args.batch,
        lr=args.lr,
        seed=args.seed,
        window=args.window,
        early_stop=not args.no_early_stop,
    )
    run = RunConfig.from_args(args)
    student = load_checkpoint(args.model)
    teacher = None
    if cfg.mode is DefenseMode.PSEUDO_LABEL:
        teacher = TeacherModel.freeze(load_checkpoint(args.teacher or args.model))
    dataset = read_dataset(args.data)
    train_set, val_set = _split(dataset, args.val)
    out = _prepare_out(run)

    result = defend(
        student,
        train_set,
        cfg,
        teacher=teacher,
        validation=val_set,
        progress=_progress(),
    )
    outputs = [
        save_checkpoint(out / DEFENDED_NAME, result.params),
        result.curve_to_csv(out / "curve.csv"),
        result.validation_to_csv(out / "validation.csv"),
    ]

    report = evaluate_defense(
        student,
        result.params,
        val_set if val_set is not None else train_set,
        epsilons=_levels(args.eval_eps, args.raw),
        kinds=args.eval_kinds,
        alpha=cfg.alpha,
        steps=args.eval_steps,
        seed=args.seed,
        jobs=args.jobs,
        teacher=teacher,
    )
    outputs.append(report.to_csv(out / "ab_report.csv"))
    table = format_ab_table(report)
    table_path = out / "ab_report.txt"
    table_path.write_text(table + "\n")
    outputs.append(table_path)
    print(table)

    _finish(
        run,
        outputs,
        defense_config=cfg.as_dict(),
        before_checksum=report.checksums["before"],
        **result.summary(),
    )
    return 0


def _read_rows(path: Path) -> list[dict[str, str]]:
    with path.open(newline="") as fh:
        return list(csv.DictReader(fh))


def _column_mean(rows: list[dict[str, str]], key: str) -> float:
    values = [float(r[key]) for r in rows if r.get(key)]
    return float(np.mean(values)) if values else float("nan")


def cmd_report(args: argparse.Namespace) -> int:
    """Merge attack runs and compare input and output degradation."""
    run = RunConfig.from_args(args)
    runs = [Path(r) for r in args.runs]
    for r in runs:
        if not (r / METRICS_NAME).is_file():
            raise ConfigError(f"{r} has no {METRICS_NAME}; is it an attack run?")
    out = _prepare_out(run)

    merged_rows: list[dict[str, str]] = []
    for r in runs:
        rows = _read_rows(r / METRICS_NAME)
        merged_rows.extend({"run": r.name, **row} for row in rows)
    merged_path = out / "merged_metrics.csv"
    with merged_path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["run", *CSV_FIELDS])
        writer.writeheader()
        writer.writerows(merged_rows)

    # I^delta vs I and J_p^delta vs J, averaged per setting
    groups: dict[tuple[str, str, str, str], list[dict[str, str]]] = defaultdict(list)
    for row in merged_rows:
        key = (row["run"], row["attack_kind"], row["epsilon"], row["steps"])
        groups[key].append(row)
    comparison = []
    for (name, kind, eps, steps), rows in groups.items():
        comparison.append(
            (
                name,
                kind,
                float(eps),
                int(steps),
                *(
                    _column_mean(rows, key)
                    for key in ("input_psnr_db", "input_ssim", "psnr_db", "ssim")
                ),
            )
        )
    comparison_path = write_csv(
        out / "comparison.csv",
        [
            "run",
            "attack_kind",
            "epsilon",
            "steps",
            "input_psnr_db",
            "input_ssim",
            "output_psnr_db",
            "output_ssim",
        ],
        comparison,
    )

    hist_rows = []
    for r in runs:
        for path in sorted(r.glob("mscn_*.csv")):
            series = path.stem.removeprefix("mscn_")
            hist_rows.extend(
                (r.name, series, float(row["bin_center"]), float(row["mass"]))
                for row in _read_rows(path)
            )
    mscn_path = write_csv(
        out / "mscn_histograms.csv", ["run", "series", "bin_center", "mass"], hist_rows
    )
    for name, kind, eps, steps, in_psnr, _, out_psnr, _ in comparison:
        print(
            f"{name} {kind} eps={eps * 255:g}/255 k={steps}: "
            f"input {in_psnr:.2f} dB, output {out_psnr:.2f} dB"
        )
    _finish(
        run,
        [merged_path, comparison_path, mscn_path],
        runs=[str(r) for r in runs],
        rows=len(merged_rows),
    )
    return 0


# ------------------- parser -------------------


def _common() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        "-v", "--verbose", action="count", default=0, help="more logging (repeatable)"
    )
    common.add_argument("-q", "--quiet", action="store_true", help="warnings only")
    common.add_argument("--jobs", type=int, default=1, help="worker threads")
    common.add_argument("--config", help="key = value file with default settings")
    common.add_argument("--seed", type=int, default=0, help="master seed")
    common.add_argument("--out", required=True, help="output directory")
    return common


def build_parser() -> tuple[
    argparse.ArgumentParser, dict[str, argparse.ArgumentParser]
]:
    """Return the top-level parser and the subcommand parsers by name."""
    parser = argparse.ArgumentParser(
        prog="dehazeguard",
        description="Adversarial attacks and defenses for a tiny dehazing network.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    common = _common()
    commands: dict[str, argparse.ArgumentParser] = {}

    def add(
        name: str, func: Callable[[argparse.Namespace], int], summary: str
    ) -> argparse.ArgumentParser:
        p = sub.add_parser(name, parents=[common], help=summary)
        p.set_defaults(func=func)
        commands[name] = p
        return p

    p = add("gen", cmd_gen, "generate a synthetic hazy/clear dataset")
    p.add_argument("--count", type=int, default=512)
    p.add_argument("--size", type=int, default=32)

    p = add("train", cmd_train, "train the dehazing network")
    p.add_argument("--data", required=True)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--batch", type=int, default=8)
    p.add_argument("--val", type=int, default=64, help="held-out pairs (0: none)")
    p.add_argument("--distance", choices=[d.value for d in Distance], default="mse")

    p = add("attack", cmd_attack, "attack a trained network over an epsilon sweep")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument(
        "--kind", type=str.upper, choices=[k.value for k in AttackKind], default="P"
    )
    p.add_argument("--distance", choices=[d.value for d in Distance], default="mse")
    p.add_argument("--eps-list", type=_float_list, default=[0, 2, 4, 6, 8])
    p.add_argument("--alpha", type=float, default=2)
    p.add_argument("--steps", type=_int_list, default=[10], help="one or more k")
    p.add_argument("--raw", action="store_true", help="eps/alpha in image units")
    p.add_argument("--val", type=int, default=0, help="attack only the last N pairs")
    p.add_argument("--dump-images", type=int, default=0, metavar="N")
    p.add_argument("--image-format", choices=["png", "ppm"], default="png")

    p = add("defend", cmd_defend, "adversarially fine-tune a trained network")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument(
        "--mode", type=str.upper, choices=[m.value for m in DefenseMode], default="P"
    )
    p.add_argument("--teacher", help="teacher checkpoint (default: --model)")
    p.add_argument("--lambda", dest="lam", type=float, default=1.0)
    p.add_argument("--eps", type=float, default=8)
    p.add_argument("--alpha", type=float, default=2)
    p.add_argument("--steps", type=_int_list, default=[10])
    p.add_argument("--multi-step", action="store_true", help="sample k from 20/25/30")
    p.add_argument("--epochs", type=int, default=40)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--batch", type=int, default=8)
    p.add_argument("--val", type=int, default=64)
    p.add_argument("--window", type=int, default=50)
    p.add_argument("--no-early-stop", action="store_true")
    p.add_argument("--eval-eps", type=_float_list, default=[0, 2, 4, 6, 8])
    p.add_argument("--eval-kinds", type=_kind_list, default=["P", "G"])
    p.add_argument("--eval-steps", type=int, default=10)
    p.add_argument("--raw", action="store_true")

    p = add("report", cmd_report, "merge attack runs into comparison tables")
    p.add_argument("--runs", nargs="+", required=True)

    return parser, commands


def _configure_logging(args: argparse.Namespace) -> None:
    if args.quiet:
        level = logging.WARNING
    else:
        level = (logging.WARNING, logging.INFO)[min(args.verbose, 1)]
        if args.verbose >= 2:
            level = logging.DEBUG
    logging.basicConfig(
        level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s"
    )


def _parse(argv: Sequence[str] | None) -> argparse.Namespace:
    parser, commands = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    # the config file must be applied before required flags are checked
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if known.config and argv and argv[0] in commands:
        try:
            _apply_config_file(commands[argv[0]], known.config)
        except (ConfigError, OSError) as e:
            commands[argv[0]].error(str(e))
    return parser.parse_args(argv)


def main(argv: Sequence[str] | None = None) -> int:
    """Run the CLI; returns 0 on success, 2 on usage errors and 1 on failures."""
    try:
        args = _parse(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else 2
    _configure_logging(args)
    try:
        return int(args.func(args))
    except ConfigError as e:
        logger.error(f"invalid settings: {e}")
        return 2
    except Exception as e:
        logger.error(f"{args.command} failed: {type(e).__name__}: {e}")
        logger.debug("traceback", exc_info=True)
        return 1


if __name__ == "__main__":
    sys.exit(main())
