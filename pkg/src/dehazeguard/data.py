"""Procedural hazy/clear image pairs for training and attacking.

Clear scenes are a smooth background gradient with textured rectangles and disks
placed at distinct depths. Haze follows the homogeneous atmospheric scattering
model ``I = J * t + A * (1 - t)`` with transmission ``t = exp(-beta * d)``.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import repeat
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np

from ._dataset import HazeDataset, write_dataset
from ._errors import ConfigError, ShapeError
from .util import rng, write_json

if TYPE_CHECKING:
    import os
    from typing import Any

__all__ = [
    "AIRLIGHT_RANGE",
    "BETA_RANGE",
    "HazeParams",
    "SceneSpec",
    "apply_haze",
    "gen_dataset",
    "render_clear",
]

MIN_SIZE = 16
# sampling ranges used by gen_dataset
BETA_RANGE = (0.8, 2.5)
AIRLIGHT_RANGE = (0.7, 1.0)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SceneSpec:
    """Everything needed to render one clear scene.

    An empty `palette` means "draw a palette from `seed`".
    """

    seed: int
    size: tuple[int, int] = (32, 32)
    object_count: int = 3
    palette: tuple[tuple[float, float, float], ...] = ()

    def __post_init__(self) -> None:
        h, w = self.size
        if h < MIN_SIZE or w < MIN_SIZE:
            raise ConfigError(f"scene size must be at least {MIN_SIZE}x{MIN_SIZE}")
        if self.object_count < 0:
            raise ConfigError(f"object_count must be >= 0, got {self.object_count}")
        for rgb in self.palette:
            if len(rgb) != 3 or not all(0 <= v <= 1 for v in rgb):
                raise ConfigError(
                    f"palette entries must be RGB triples in [0, 1]: {rgb}"
                )


@dataclass(frozen=True)
class HazeParams:
    """Scattering coefficient and airlight of a homogeneous haze layer.

    `airlight` is a single value or one value per channel, each in [0.6, 1.0].
    ``beta == 0`` is accepted and means "no haze".
    """

    beta: float
    airlight: float | tuple[float, float, float] = 1.0

    def __post_init__(self) -> None:
        if not np.isfinite(self.beta) or self.beta < 0:
            raise ConfigError(f"beta must be finite and >= 0, got {self.beta}")
        values = np.atleast_1d(np.asarray(self.airlight, dtype=np.float64))
        if values.shape not in ((1,), (3,)):
            raise ConfigError(
                f"airlight must be a scalar or RGB triple: {self.airlight}"
            )
        if np.any(values < 0.6) or np.any(values > 1.0):
            raise ConfigError(f"airlight must lie in [0.6, 1.0], got {self.airlight}")

    def airlight_rgb(self) -> np.ndarray:
        """Airlight as a ``(3, 1, 1)`` array."""
        return np.broadcast_to(
            np.asarray(self.airlight, dtype=np.float64), (3,)
        ).reshape(3, 1, 1)


def _palette(spec: SceneSpec, gen: np.random.Generator) -> np.ndarray:
    if spec.palette:
        return np.asarray(spec.palette, dtype=np.float64)
    return gen.uniform(0.0, 1.0, size=(6, 3))


def _texture(
    gen: np.random.Generator, yy: np.ndarray, xx: np.ndarray
) -> np.ndarray:
    """Rotated sine grating in [0, 1]."""
    angle = gen.uniform(0, np.pi)
    frequency = gen.uniform(0.3, 1.2)
    phase = gen.uniform(0, 2 * np.pi)
    xr = np.cos(angle) * xx - np.sin(angle) * yy
    return 0.5 + 0.5 * np.sin(frequency * xr + phase)


def render_clear(spec: SceneSpec) -> tuple[np.ndarray, np.ndarray]:
    """Render a clear image and its depth map.

    Returns
    -------
    tuple[np.ndarray, np.ndarray]
        ``(J, d)``: a ``(3, H, W)`` float32 image in [0, 1] and an ``(H, W)``
        float32 depth map in [0, 1]. The background sits at depth 1.
    """
    h, w = spec.size
    gen = np.random.default_rng(spec.seed)
    palette = _palette(spec, gen)

    # vertical gradient between two palette colors
    top, bottom = palette[0], palette[1 % len(palette)]
    ramp = np.linspace(0.0, 1.0, h)[None, :, None]
    image = np.broadcast_to(
        top[:, None, None] * (1 - ramp) + bottom[:, None, None] * ramp, (3, h, w)
    ).copy()
    depth = np.ones((h, w))

    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    count = spec.object_count
    # strictly decreasing depths: objects are painted far to near
    depths = 0.9 - 0.8 * (np.arange(count) + gen.uniform(0.1, 0.9, count)) / max(
        count, 1
    )
    for obj_depth in depths:
        cy, cx = gen.uniform(0, h), gen.uniform(0, w)
        ry = gen.uniform(h / 8, h / 3)
        rx = gen.uniform(w / 8, w / 3)
        if gen.random() < 0.5:
            region = (np.abs(yy - cy) <= ry) & (np.abs(xx - cx) <= rx)
        else:
            region = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0
        color = palette[gen.integers(len(palette))]
        shade = 0.5 + 0.5 * _texture(gen, yy, xx)
        image[:, region] = (color[:, None] * shade[region][None, :]).clip(0, 1)
        depth[region] = obj_depth

    return image.astype(np.float32), depth.astype(np.float32)


def apply_haze(
    clear: np.ndarray, depth: np.ndarray, params: HazeParams
) -> np.ndarray:
    """Synthesize a hazy image ``I = J * t + A * (1 - t)``, ``t = exp(-beta * d)``.

    Parameters
    ----------
    clear : np.ndarray
        ``(3, H, W)`` clear image in [0, 1].
    depth : np.ndarray
        ``(H, W)`` non-negative depth; ``inf`` yields pure airlight.
    params : HazeParams
        Scattering coefficient and airlight.
    """
    if clear.ndim != 3 or clear.shape[0] != 3:
        raise ShapeError(f"clear image must be (3, H, W), got {clear.shape}")
    if depth.shape != clear.shape[1:]:
        raise ShapeError(f"depth {depth.shape} does not match image {clear.shape}")
    if np.any(depth < 0):
        raise ConfigError("depth must be non-negative")

    if params.beta == 0:
        transmission = np.ones(depth.shape)
    else:
        transmission = np.exp(-params.beta * depth.astype(np.float64))
    t = transmission[None]
    hazy = clear.astype(np.float64) * t + params.airlight_rgb() * (1 - t)

    if n_clipped := int(np.count_nonzero((hazy < 0) | (hazy > 1))):
        logger.warning(f"apply_haze clipped {n_clipped} values into [0, 1]")
        hazy = np.clip(hazy, 0, 1)
    return hazy.astype(np.float32)


@dataclass(frozen=True)
class PairRecord:
    """Parameters that produced one dataset pair."""

    index: int
    seed: int
    beta: float
    airlight: float
    object_count: int

    def as_dict(self) -> dict[str, Any]:
        """JSON-ready form for the dataset manifest."""
        return {
            "index": self.index,
            "seed": self.seed,
            "beta": self.beta,
            "airlight": self.airlight,
            "object_count": self.object_count,
        }


@dataclass
class GeneratedDataset:
    """The result of `gen_dataset`: the pairs plus where they were written."""

    dataset: HazeDataset
    records: list[PairRecord] = field(default_factory=list)
    path: Path | None = None
    manifest_path: Path | None = None


def _make_pair(
    index: int, size: tuple[int, int], seed: int
) -> tuple[np.ndarray, np.ndarray, PairRecord]:
    gen = rng(seed, "pair", index)
    record = PairRecord(
        index=index,
        seed=int(gen.integers(0, 2**63 - 1)),
        beta=float(gen.uniform(*BETA_RANGE)),
        airlight=float(gen.uniform(*AIRLIGHT_RANGE)),
        object_count=int(gen.integers(2, 6)),
    )
    spec = SceneSpec(seed=record.seed, size=size, object_count=record.object_count)
    clear, depth = render_clear(spec)
    hazy = apply_haze(clear, depth, HazeParams(record.beta, record.airlight))
    return hazy, clear, record


def manifest_path_for(path: str | os.PathLike[str]) -> Path:
    """Sidecar manifest location for a dataset file."""
    path = Path(path)
    return path.with_name(path.name + ".json")


def gen_dataset(
    n: int,
    size: int | tuple[int, int] = 32,
    seed: int = 0,
    path: str | os.PathLike[str] | None = None,
    *,
    jobs: int = 1,
) -> GeneratedDataset:
    """Generate `n` hazy/clear pairs with randomized beta and airlight.

    Every pair depends only on ``(seed, index)``, so `jobs` never changes the
    content. When `path` is given, the pairs are written in the binary dataset
    format and a JSON manifest is written next to it.
    """
    if n < 1:
        raise ConfigError(f"dataset needs at least one pair, got n={n}")
    hw = (size, size) if isinstance(size, int) else tuple(size)
    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        pairs = list(pool.map(_make_pair, range(n), repeat(hw), repeat(seed)))

    hazy = np.stack([p[0] for p in pairs])
    clear = np.stack([p[1] for p in pairs])
    records = [p[2] for p in pairs]
    result = GeneratedDataset(HazeDataset(hazy, clear), records)
    logger.info(f"generated {n} pairs of {hw[0]}x{hw[1]} with seed {seed}")

    if path is not None:
        result.path = write_dataset(path, result.dataset)
        result.manifest_path = write_json(
            manifest_path_for(path),
            {
                "format": "HZDS",
                "master_seed": seed,
                "count": n,
                "size": list(hw),
                "beta_range": list(BETA_RANGE),
                "airlight_range": list(AIRLIGHT_RANGE),
                "pairs": [r.as_dict() for r in records],
            },
        )
    return result
