"""In-memory hazy/clear pairs and their binary file format.

Layout (little-endian): magic ``b"HZDS"``, version u16, count u32, C u16, H u16,
W u16, then `count` records of (hazy, clear), each a plane-major float32 image.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np

from ._errors import ConfigError, FormatError, ShapeError
from .util import atomic_write_bytes

if TYPE_CHECKING:
    import os
    from typing import Iterator, Sequence

__all__ = ["DATASET_MAGIC", "HazeDataset", "read_dataset", "write_dataset"]

DATASET_MAGIC = b"HZDS"
DATASET_VERSION = 1
_HEADER = struct.Struct("<4sHIHHH")

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class HazeDataset:
    """Paired ``(N, 3, H, W)`` float32 hazy and clear images in [0, 1]."""

    hazy: np.ndarray
    clear: np.ndarray

    def __post_init__(self) -> None:
        if self.hazy.ndim != 4 or self.hazy.shape[1] != 3:
            raise ShapeError(f"hazy images must be (N, 3, H, W), got {self.hazy.shape}")
        if self.hazy.shape != self.clear.shape:
            raise ShapeError(
                f"hazy {self.hazy.shape} and clear {self.clear.shape} differ in shape"
            )

    def __len__(self) -> int:
        return int(self.hazy.shape[0])

    @property
    def image_shape(self) -> tuple[int, int, int]:
        _, c, h, w = self.hazy.shape
        return c, h, w

    def subset(self, indices: Sequence[int] | np.ndarray) -> HazeDataset:
        idx = np.asarray(indices, dtype=np.intp)
        return HazeDataset(self.hazy[idx], self.clear[idx])

    def split(self, n_val: int) -> tuple[HazeDataset, HazeDataset]:
        """Split off the last `n_val` pairs as a validation set."""
        if not 0 < n_val < len(self):
            raise ConfigError(
                f"validation size must be in (0, {len(self)}), got {n_val}"
            )
        cut = len(self) - n_val
        return self.subset(range(cut)), self.subset(range(cut, len(self)))

    def batches(
        self, batch_size: int, gen: np.random.Generator | None = None
    ) -> Iterator[np.ndarray]:
        """Yield index arrays covering the dataset once, shuffled when `gen` is given.

        The last batch may be smaller than `batch_size`.
        """
        if batch_size < 1:
            raise ConfigError(f"batch size must be >= 1, got {batch_size}")
        order = np.arange(len(self)) if gen is None else gen.permutation(len(self))
        for start in range(0, len(self), batch_size):
            yield order[start : start + batch_size]


def write_dataset(path: str | os.PathLike[str], dataset: HazeDataset) -> Path:
    """Write `dataset` in the binary dataset format."""
    n = len(dataset)
    c, h, w = dataset.image_shape
    header = _HEADER.pack(DATASET_MAGIC, DATASET_VERSION, n, c, h, w)
    # interleave (hazy_i, clear_i) records
    records = np.stack([dataset.hazy, dataset.clear], axis=1).astype("<f4")
    path = atomic_write_bytes(path, header + records.tobytes(order="C"))
    logger.debug(f"wrote {n} pairs to {path}")
    return path


def read_dataset(path: str | os.PathLike[str]) -> HazeDataset:
    """Read a dataset file, validating its header and size."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: file too short for a dataset header")
    magic, version, n, c, h, w = _HEADER.unpack_from(raw)
    if magic != DATASET_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {DATASET_MAGIC!r}")
    if version != DATASET_VERSION:
        raise FormatError(f"{path}: unsupported dataset version {version}")
    if c != 3:
        raise FormatError(f"{path}: expected 3 channels, found {c}")
    expected = _HEADER.size + n * 2 * c * h * w * 4
    if len(raw) != expected:
        raise FormatError(f"{path}: expected {expected} bytes, found {len(raw)}")
    records = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size)
    records = records.reshape(n, 2, c, h, w).astype(np.float32)
    return HazeDataset(records[:, 0].copy(), records[:, 1].copy())
