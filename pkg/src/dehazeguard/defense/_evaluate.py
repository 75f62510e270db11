"""Before/after comparison of a defended network under an attack sweep."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING

from dehazeguard._errors import ContractError
from dehazeguard.attack import AttackConfig, AttackKind, attack_dataset, attack_report
from dehazeguard.metrics import Distance
from dehazeguard.model import evaluate
from dehazeguard.util import write_csv

if TYPE_CHECKING:
    import os
    from typing import Iterable, Sequence

    from dehazeguard._dataset import HazeDataset
    from dehazeguard.model import ModelParams, TeacherModel

__all__ = [
    "DEFAULT_EPSILONS",
    "ABRow",
    "DefenseReport",
    "evaluate_defense",
    "format_ab_table",
]

DEFAULT_EPSILONS = tuple(i / 255 for i in (0, 2, 4, 6, 8))
CLEAN = "clean"
CHECKPOINTS = ("before", "after")

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ABRow:
    checkpoint: str
    kind: str
    epsilon: float
    psnr_db: float
    ssim: float


@dataclass
class DefenseReport:
    """Mean PSNR/SSIM of both checkpoints for every (kind, epsilon), plus clean rows."""

    rows: list[ABRow] = field(default_factory=list)
    checksums: dict[str, str] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.rows)

    def lookup(self, checkpoint: str, kind: str, epsilon: float = 0.0) -> ABRow:
        for row in self.rows:
            if (
                row.checkpoint == checkpoint
                and row.kind == kind
                and abs(row.epsilon - epsilon) < 1e-9
            ):
                return row
        raise KeyError((checkpoint, kind, epsilon))

    def settings(self) -> list[tuple[str, float]]:
        """Distinct ``(kind, epsilon)`` pairs in first-seen order, clean first."""
        seen: dict[tuple[str, float], None] = {}
        for row in sorted(self.rows, key=lambda r: r.kind != CLEAN):
            seen.setdefault((row.kind, row.epsilon), None)
        return list(seen)

    def to_csv(self, path: str | os.PathLike[str]) -> Path:
        return write_csv(
            path,
            ["checkpoint", "kind", "epsilon", "psnr_db", "ssim"],
            ((r.checkpoint, r.kind, r.epsilon, r.psnr_db, r.ssim) for r in self.rows),
        )

    @classmethod
    def from_csv(cls, path: str | os.PathLike[str]) -> DefenseReport:
        with Path(path).open(newline="") as fh:
            return cls(
                [
                    ABRow(
                        row["checkpoint"],
                        row["kind"],
                        float(row["epsilon"]),
                        float(row["psnr_db"]),
                        float(row["ssim"]),
                    )
                    for row in csv.DictReader(fh)
                ]
            )


def _sweep(
    label: str,
    params: ModelParams,
    dataset: HazeDataset,
    configs: Iterable[AttackConfig],
    jobs: int,
    checksum: str,
) -> list[ABRow]:
    clean = evaluate(params, dataset).aggregate()
    rows = [
        ABRow(label, CLEAN, 0.0, clean["psnr_db"]["mean"], clean["ssim"]["mean"])
    ]
    for cfg in configs:
        results = attack_dataset(params, dataset, cfg, jobs=jobs)
        report = attack_report(results, dataset, cfg)
        if report.provenance["model_checksum"] != checksum:
            raise ContractError(f"{label} checkpoint changed during the sweep")
        stats = report.aggregate()
        rows.append(
            ABRow(
                label,
                str(cfg.kind),
                cfg.epsilon,
                stats["psnr_db"]["mean"],
                stats["ssim"]["mean"],
            )
        )
    return rows


def evaluate_defense(
    before: ModelParams,
    after: ModelParams,
    dataset: HazeDataset,
    *,
    epsilons: Sequence[float] = DEFAULT_EPSILONS,
    kinds: Sequence[AttackKind | str] = ("P", "G"),
    distance: Distance = Distance.MSE,
    alpha: float = 2 / 255,
    steps: int = 10,
    seed: int = 0,
    jobs: int = 1,
    teacher: TeacherModel | None = None,
) -> DefenseReport:
    """Attack both checkpoints with every ``(kind, epsilon)`` of the sweep.

    Both checkpoints see the same perturbation streams, so identical parameters give
    identical rows. The checksums of both checkpoints are recorded on the report.

    Raises
    ------
    ContractError
        If either checkpoint (or `teacher`) changes while the sweep runs.
    """
    if teacher is not None:
        teacher.verify()
    configs = [
        AttackConfig(
            kind=AttackKind(kind),
            distance=distance,
            epsilon=eps,
            alpha=alpha,
            steps=steps,
            seed=seed,
        )
        for kind in kinds
        for eps in epsilons
    ]
    pairs = list(zip(CHECKPOINTS, (before, after)))
    report = DefenseReport(checksums={label: p.checksum() for label, p in pairs})
    for label, params in pairs:
        checksum = report.checksums[label]
        report.rows.extend(_sweep(label, params, dataset, configs, jobs, checksum))
        logger.info(f"evaluated {label} checkpoint over {len(configs)} attack settings")
    for label, params in pairs:
        if params.checksum() != report.checksums[label]:
            raise ContractError(f"{label} checkpoint changed during the sweep")
    if teacher is not None:
        teacher.verify()
    return report


def format_ab_table(report: DefenseReport) -> str:
    """Render ``after/before`` PSNR and SSIM pairs, one line per setting."""
    header = f"{'kind':<6}{'eps':>6}  {'PSNR after/before':>20}"
    lines = [f"{header}  {'SSIM after/before':>18}"]
    for kind, eps in report.settings():
        a = report.lookup("after", kind, eps)
        b = report.lookup("before", kind, eps)
        level = "-" if kind == CLEAN else f"{eps * 255:g}"
        lines.append(
            f"{kind:<6}{level:>6}  {f'{a.psnr_db:.3f}/{b.psnr_db:.3f}':>20}  "
            f"{f'{a.ssim:.3f}/{b.ssim:.3f}':>18}"
        )
    return "\n".join(lines)
