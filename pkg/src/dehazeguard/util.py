"""Utility and convenience functions."""

from __future__ import annotations

import csv
import json
import os
import zlib
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np

from ._errors import FormatError, ShapeError

if TYPE_CHECKING:
    from typing import Any, Iterable, Sequence

IMAGE_SUFFIXES = (".ppm", ".png")


def rng(seed: int, name: str, *indices: int) -> np.random.Generator:
    """Return the random stream `name` (optionally indexed) of master `seed`.

    Streams are derived from ``(seed, crc32(name), *indices)`` alone, so the values
    drawn from one never depend on how many others were used before it.
    """
    key = (zlib.crc32(name.encode()), *(int(i) for i in indices))
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=key))


def stream_seed(seed: int, name: str, *indices: int) -> int:
    """Derive a 63-bit integer seed for a named sub-stream."""
    return int(rng(seed, name, *indices).integers(0, 2**63 - 1))


# ------------------- images -------------------


def to_uint8(image: np.ndarray) -> np.ndarray:
    """Convert a ``(3, H, W)`` float image in [0, 1] to ``(H, W, 3)`` uint8."""
    if image.ndim != 3 or image.shape[0] != 3:
        raise ShapeError(f"expected a (3, H, W) image, got {image.shape}")
    scaled = np.round(255 * np.clip(image.astype(np.float64), 0, 1))
    return np.ascontiguousarray(scaled.astype(np.uint8).transpose(1, 2, 0))


def from_uint8(pixels: np.ndarray) -> np.ndarray:
    """Convert ``(H, W, 3)`` uint8 pixels to a ``(3, H, W)`` float32 image."""
    if pixels.ndim != 3 or pixels.shape[2] != 3:
        raise ShapeError(f"expected (H, W, 3) pixels, got {pixels.shape}")
    return (pixels.transpose(2, 0, 1).astype(np.float32) / 255).astype(np.float32)


def save_image(path: str | os.PathLike[str], image: np.ndarray) -> Path:
    """Write a ``(3, H, W)`` image in [0, 1] as 8-bit PPM (P6) or PNG.

    The format is chosen from the suffix of `path`.
    """
    import imageio.v3 as iio

    path = Path(path)
    if path.suffix.lower() not in IMAGE_SUFFIXES:
        raise FormatError(f"unsupported image format {path.suffix!r}: {path}")
    path.parent.mkdir(parents=True, exist_ok=True)
    iio.imwrite(path, to_uint8(image))
    return path


def load_image(path: str | os.PathLike[str]) -> np.ndarray:
    """Read an 8-bit RGB PPM or PNG as a ``(3, H, W)`` float32 image."""
    import imageio.v3 as iio

    path = Path(path)
    if path.suffix.lower() not in IMAGE_SUFFIXES:
        raise FormatError(f"unsupported image format {path.suffix!r}: {path}")
    pixels = np.asarray(iio.imread(path))
    if pixels.ndim == 3 and pixels.shape[2] == 4:
        pixels = pixels[..., :3]
    if pixels.dtype != np.uint8:
        raise FormatError(f"expected 8-bit pixels in {path}, got {pixels.dtype}")
    return from_uint8(pixels)


# ------------------- files -------------------


def atomic_write_bytes(path: str | os.PathLike[str], payload: bytes) -> Path:
    """Write `payload` to `path` via a temporary sibling file and a rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.tmp")
    tmp.write_bytes(payload)
    os.replace(tmp, path)
    return path


def write_json(path: str | os.PathLike[str], obj: Any) -> Path:
    """Atomically write `obj` as indented JSON."""
    text = json.dumps(obj, indent=2, sort_keys=True, default=_json_default)
    return atomic_write_bytes(path, (text + "\n").encode())


def _json_default(obj: Any) -> Any:
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, os.PathLike):
        return os.fspath(obj)
    # str-valued enums and anything else printable
    return str(obj)


def write_csv(
    path: str | os.PathLike[str],
    header: Sequence[str],
    rows: Iterable[Sequence[Any]],
) -> Path:
    """Write `rows` under `header`; floats are written with 10 significant digits."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([f"{v:.10g}" if isinstance(v, float) else v for v in row])
    return path
