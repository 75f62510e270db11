"""Image quality metrics: MSE, PSNR, SSIM and MSCN statistics.

`ssim_tensor` builds SSIM out of differentiable ops so attacks can climb its
gradient; `ssim` evaluates the same graph without recording and returns a float.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np
from scipy import signal

from . import autograd as ag
from ._errors import ConfigError, ShapeError

if TYPE_CHECKING:
    import os
    from typing import Any, Iterable, Sequence

__all__ = [
    "HISTOGRAM_BINS",
    "HISTOGRAM_RANGE",
    "PSNR_CAP",
    "Distance",
    "ImageRecord",
    "MetricsReport",
    "SsimConfig",
    "gaussian_window",
    "histogram",
    "mean_histogram",
    "mscn",
    "mse",
    "mse_tensor",
    "psnr",
    "restoration_loss",
    "ssim",
    "ssim_tensor",
    "write_histogram_csv",
]

PSNR_CAP = 100.0
HISTOGRAM_BINS = 101
HISTOGRAM_RANGE = (-3.0, 3.0)
MSCN_WINDOW = 7
MSCN_SIGMA = 7 / 6
MSCN_C = 1 / 255


def gaussian_window(size: int, sigma: float) -> np.ndarray:
    """Return a ``(size, size)`` Gaussian kernel normalized to sum to 1."""
    if size < 1 or sigma <= 0:
        raise ConfigError(f"invalid Gaussian window {size=}, {sigma=}")
    ax = np.arange(size, dtype=np.float64) - (size - 1) / 2
    g = np.exp(-(ax**2) / (2 * sigma**2))
    kernel = np.outer(g, g)
    return kernel / kernel.sum()


@dataclass(frozen=True)
class SsimConfig:
    """Gaussian-windowed SSIM settings for images with dynamic range `data_range`."""

    window: int = 11
    sigma: float = 1.5
    k1: float = 0.01
    k2: float = 0.03
    data_range: float = 1.0

    def __post_init__(self) -> None:
        if self.window < 1 or self.sigma <= 0:
            raise ConfigError(f"invalid SSIM window {self.window}/{self.sigma}")
        if self.k1 <= 0 or self.k2 <= 0 or self.data_range <= 0:
            raise ConfigError("SSIM constants must be positive")

    @property
    def c1(self) -> float:
        """Luminance stabilizer ``(k1 * L) ** 2``."""
        return (self.k1 * self.data_range) ** 2

    @property
    def c2(self) -> float:
        """Contrast stabilizer ``(k2 * L) ** 2``."""
        return (self.k2 * self.data_range) ** 2

    def kernel(self) -> np.ndarray:
        """The normalized Gaussian window."""
        return gaussian_window(self.window, self.sigma)


DEFAULT_SSIM = SsimConfig()


def _pair64(x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ShapeError(f"images differ in shape: {x.shape} vs {y.shape}")
    return x, y


def mse(x: np.ndarray, y: np.ndarray) -> float:
    """Mean over all elements of ``(x - y) ** 2``."""
    x, y = _pair64(x, y)
    return float(np.mean((x - y) ** 2))


def psnr(x: np.ndarray, y: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB for images in [0, 1], capped at 100 dB."""
    err = mse(x, y)
    if err < 1e-10:
        return PSNR_CAP
    return 10.0 * math.log10(1.0 / err)


def ssim_tensor(
    x: ag.Tensor, y: ag.Tensor, cfg: SsimConfig = DEFAULT_SSIM
) -> ag.Tensor:
    """Differentiable mean SSIM of two ``(N, C, H, W)`` tensors.

    Local statistics use the Gaussian window of `cfg` over the valid region. The
    SSIM map is averaged per channel, then over channels and images (all windows
    have equal counts, so this is a plain mean).
    """
    if x.shape != y.shape:
        raise ShapeError(f"ssim: images differ in shape: {x.shape} vs {y.shape}")
    if x.data.ndim != 4:
        raise ShapeError(f"ssim: expected (N, C, H, W) tensors, got {x.shape}")
    kernel = cfg.kernel()
    if x.shape[2] < cfg.window or x.shape[3] < cfg.window:
        raise ShapeError(
            f"ssim: image {x.shape[2:]} smaller than the "
            f"{cfg.window}x{cfg.window} window"
        )
    mu_x = ag.gaussian_blur(x, kernel)
    mu_y = ag.gaussian_blur(y, kernel)
    mu_xx = ag.square(mu_x)
    mu_yy = ag.square(mu_y)
    mu_xy = ag.mul(mu_x, mu_y)
    var_x = ag.gaussian_blur(ag.square(x), kernel) - mu_xx
    var_y = ag.gaussian_blur(ag.square(y), kernel) - mu_yy
    cov = ag.gaussian_blur(ag.mul(x, y), kernel) - mu_xy

    numerator = (mu_xy * 2.0 + cfg.c1) * (cov * 2.0 + cfg.c2)
    denominator = (mu_xx + mu_yy + cfg.c1) * (var_x + var_y + cfg.c2)
    return ag.mean(numerator / denominator)


class Distance(str, Enum):
    """Restoration distance used for training and attack objectives."""

    MSE = "mse"
    SSIM = "ssim"

    def __str__(self) -> str:
        """Return the value, as used on the command line."""
        return self.value


def mse_tensor(x: ag.Tensor, y: ag.Tensor) -> ag.Tensor:
    """Differentiable mean squared error."""
    return ag.mean(ag.square(ag.sub(x, y)))


def restoration_loss(
    prediction: ag.Tensor,
    target: ag.Tensor,
    distance: Distance | str = Distance.MSE,
    cfg: SsimConfig = DEFAULT_SSIM,
) -> ag.Tensor:
    """``MSE(prediction, target)`` or ``1 - SSIM(prediction, target)``."""
    if Distance(distance) is Distance.MSE:
        return mse_tensor(prediction, target)
    return 1.0 - ssim_tensor(prediction, target, cfg)


def _as_batch(x: np.ndarray) -> np.ndarray:
    if x.ndim == 2:
        return x[None, None]
    if x.ndim == 3:
        return x[None]
    return x


def ssim(x: np.ndarray, y: np.ndarray, cfg: SsimConfig = DEFAULT_SSIM) -> float:
    """Mean SSIM of two images (``(H, W)``, ``(C, H, W)`` or ``(N, C, H, W)``)."""
    x, y = np.asarray(x), np.asarray(y)
    if x.shape != y.shape:
        raise ShapeError(f"images differ in shape: {x.shape} vs {y.shape}")
    dtype = x.dtype if np.issubdtype(x.dtype, np.floating) else np.float64
    tx = ag.Tensor(_as_batch(x), dtype=dtype)
    ty = ag.Tensor(_as_batch(y), dtype=dtype)
    return ssim_tensor(tx, ty, cfg).item()


# ------------------- MSCN -------------------


def mscn(
    image: np.ndarray,
    window: int = MSCN_WINDOW,
    sigma: float = MSCN_SIGMA,
    c: float = MSCN_C,
) -> np.ndarray:
    """Mean-subtracted contrast-normalized coefficients of an image.

    Color images (``(3, H, W)``) are converted to gray by the channel mean. Only
    the valid region is returned, ``(H - window + 1, W - window + 1)``.
    """
    img = np.asarray(image, dtype=np.float64)
    gray = img.mean(axis=0) if img.ndim == 3 else img
    if gray.ndim != 2:
        raise ShapeError(f"mscn expects a (H, W) or (C, H, W) image, got {img.shape}")
    if gray.shape[0] < window or gray.shape[1] < window:
        raise ShapeError(
            f"image {gray.shape} smaller than the {window}x{window} window"
        )
    kernel = gaussian_window(window, sigma)
    mu = signal.correlate2d(gray, kernel, mode="valid")
    second = signal.correlate2d(gray * gray, kernel, mode="valid")
    sd = np.sqrt(np.abs(second - mu * mu))
    half = window // 2
    center = gray[half : gray.shape[0] - half, half : gray.shape[1] - half]
    return (center - mu) / (sd + c)  # type: ignore[no-any-return]


def histogram(
    coeffs: np.ndarray,
    bins: int = HISTOGRAM_BINS,
    value_range: tuple[float, float] = HISTOGRAM_RANGE,
) -> tuple[np.ndarray, np.ndarray]:
    """Normalized histogram of `coeffs`; out-of-range values land in the end bins.

    Returns
    -------
    tuple[np.ndarray, np.ndarray]
        Bin centers and probability mass (sums to 1).
    """
    lo, hi = value_range
    counts, edges = np.histogram(np.clip(coeffs, lo, hi), bins=bins, range=(lo, hi))
    centers = (edges[:-1] + edges[1:]) / 2
    total = counts.sum()
    mass = counts / total if total else counts.astype(np.float64)
    return centers, mass


def mean_histogram(masses: Iterable[np.ndarray]) -> np.ndarray:
    """Average several normalized histograms with identical binning."""
    stacked = np.stack(list(masses))
    return stacked.mean(axis=0)  # type: ignore[no-any-return]


def write_histogram_csv(
    path: str | os.PathLike[str], centers: np.ndarray, mass: np.ndarray
) -> Path:
    """Write a histogram as ``bin_center, mass`` rows."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bin_center", "mass"])
        for center, m in zip(centers, mass):
            writer.writerow([f"{center:.6f}", f"{m:.9g}"])
    return path


# ------------------- reports -------------------


@dataclass(frozen=True)
class ImageRecord:
    """Quality of one prediction against its reference.

    `input_psnr_db` / `input_ssim` compare the (possibly attacked) input with the
    clean hazy input, when known.
    """

    id: int
    psnr_db: float
    ssim: float
    mse: float
    epsilon: float = 0.0
    attack_kind: str = "clean"
    steps: int = 0
    input_psnr_db: float | None = None
    input_ssim: float | None = None

    @classmethod
    def measure(
        cls,
        id: int,  # noqa: A002
        prediction: np.ndarray,
        reference: np.ndarray,
        cfg: SsimConfig = DEFAULT_SSIM,
        **extra: Any,
    ) -> ImageRecord:
        """Compute PSNR, SSIM and MSE of `prediction` against `reference`."""
        return cls(
            id=id,
            psnr_db=psnr(prediction, reference),
            ssim=ssim(prediction, reference, cfg),
            mse=mse(prediction, reference),
            **extra,
        )


CSV_FIELDS = [
    "id",
    "epsilon",
    "attack_kind",
    "psnr_db",
    "ssim",
    "mse",
    "steps",
    "input_psnr_db",
    "input_ssim",
]


@dataclass
class MetricsReport:
    """Per-image records, their aggregates, and where they came from."""

    records: list[ImageRecord] = field(default_factory=list)
    provenance: dict[str, Any] = field(default_factory=dict)

    def __len__(self) -> int:
        """Number of records."""
        return len(self.records)

    def column(self, name: str) -> np.ndarray:
        """Values of one numeric field across all records."""
        return np.array([getattr(r, name) for r in self.records], dtype=np.float64)

    def aggregate(self) -> dict[str, dict[str, float]]:
        """Mean and standard deviation of PSNR, SSIM and MSE."""
        out: dict[str, dict[str, float]] = {}
        for name in ("psnr_db", "ssim", "mse"):
            values = self.column(name)
            if values.size:
                out[name] = {"mean": float(values.mean()), "std": float(values.std())}
            else:
                out[name] = {"mean": math.nan, "std": math.nan}
        return out

    @classmethod
    def from_pairs(
        cls,
        ids: Sequence[int],
        predictions: Sequence[np.ndarray] | np.ndarray,
        references: Sequence[np.ndarray] | np.ndarray,
        cfg: SsimConfig = DEFAULT_SSIM,
        provenance: dict[str, Any] | None = None,
        **extra: Any,
    ) -> MetricsReport:
        """Measure each prediction against its reference.

        `extra` fields (``epsilon``, ``attack_kind``, ...) are shared by every record.

        Raises
        ------
        ShapeError
            If the three sequences differ in length.
        """
        if not len(ids) == len(predictions) == len(references):
            raise ShapeError(
                f"got {len(ids)} ids, {len(predictions)} predictions and "
                f"{len(references)} references"
            )
        records = [
            ImageRecord.measure(int(i), pred, ref, cfg, **extra)
            for i, pred, ref in zip(ids, predictions, references)
        ]
        return cls(records, dict(provenance or {}))

    def filter(self, **criteria: Any) -> MetricsReport:
        """Return the records whose attributes equal all of `criteria`."""
        keep = [
            r
            for r in self.records
            if all(getattr(r, k) == v for k, v in criteria.items())
        ]
        return MetricsReport(keep, dict(self.provenance))

    def to_csv(self, path: str | os.PathLike[str]) -> Path:
        """Write one row per record with the `CSV_FIELDS` columns."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=CSV_FIELDS)
            writer.writeheader()
            for record in self.records:
                row = asdict(record)
                writer.writerow({k: _fmt(row[k]) for k in CSV_FIELDS})
        return path

    @classmethod
    def from_csv(cls, path: str | os.PathLike[str]) -> MetricsReport:
        """Read a report written by `to_csv`."""
        with Path(path).open(newline="") as fh:
            rows = list(csv.DictReader(fh))
        return cls([_parse_record(row) for row in rows], {"source": str(path)})

    @classmethod
    def merge(cls, reports: Sequence[MetricsReport]) -> MetricsReport:
        """Concatenate the records of several reports."""
        records = [r for report in reports for r in report.records]
        return cls(records, {"merged": [rep.provenance for rep in reports]})


def _fmt(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return f"{value:.10g}"
    return str(value)


def _parse_record(row: dict[str, str]) -> ImageRecord:
    def opt(key: str) -> float | None:
        return float(row[key]) if row.get(key) else None

    return ImageRecord(
        id=int(row["id"]),
        psnr_db=float(row["psnr_db"]),
        ssim=float(row["ssim"]),
        mse=float(row["mse"]),
        epsilon=float(row.get("epsilon") or 0.0),
        attack_kind=row.get("attack_kind") or "clean",
        steps=int(row.get("steps") or 0),
        input_psnr_db=opt("input_psnr_db"),
        input_ssim=opt("input_ssim"),
    )
