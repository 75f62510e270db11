"""Binary checkpoint format.

Layout (little-endian): magic ``b"HZCK"``, version u16, 16-byte architecture
fingerprint, parameter count u16, then per parameter: name length u16, UTF-8
name, ndim u8, ndim x u16 dims, float32 data.
"""

from __future__ import annotations

import logging
import struct
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np

from dehazeguard._errors import FormatError, ShapeError
from dehazeguard.util import atomic_write_bytes

from ._network import ARCHITECTURE_FINGERPRINT, ModelParams

if TYPE_CHECKING:
    import os
    from typing import Any

__all__ = ["CHECKPOINT_MAGIC", "dumps", "load_checkpoint", "loads", "save_checkpoint"]

CHECKPOINT_MAGIC = b"HZCK"
CHECKPOINT_VERSION = 1
_HEADER = struct.Struct("<4sH16sH")
_U16 = struct.Struct("<H")
_U8 = struct.Struct("<B")

logger = logging.getLogger(__name__)


def dumps(params: ModelParams) -> bytes:
    """Serialize `params` to checkpoint bytes."""
    parts = [
        _HEADER.pack(
            CHECKPOINT_MAGIC,
            CHECKPOINT_VERSION,
            ARCHITECTURE_FINGERPRINT,
            len(params.arrays),
        )
    ]
    for name, arr in params:
        encoded = name.encode()
        parts.append(_U16.pack(len(encoded)) + encoded)
        parts.append(_U8.pack(arr.ndim) + struct.pack(f"<{arr.ndim}H", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, raw: bytes, source: str) -> None:
        self.raw = raw
        self.pos = 0
        self.source = source

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.raw):
            raise FormatError(f"{self.source}: truncated checkpoint at byte {self.pos}")
        chunk = self.raw[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: struct.Struct) -> tuple[Any, ...]:
        return fmt.unpack(self.take(fmt.size))


def loads(raw: bytes, source: str = "<bytes>") -> ModelParams:
    """Parse checkpoint bytes, refusing anything but an exact, complete match."""
    reader = _Reader(raw, source)
    magic, version, fingerprint, count = reader.unpack(_HEADER)
    if magic != CHECKPOINT_MAGIC:
        raise FormatError(
            f"{source}: bad magic {magic!r}, expected {CHECKPOINT_MAGIC!r}"
        )
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"{source}: unsupported checkpoint version {version}")
    if fingerprint != ARCHITECTURE_FINGERPRINT:
        raise FormatError(
            f"{source}: architecture fingerprint {fingerprint.hex()} does not match "
            f"{ARCHITECTURE_FINGERPRINT.hex()}"
        )
    arrays: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = reader.unpack(_U16)
        try:
            name = reader.take(name_len).decode()
        except UnicodeDecodeError as e:
            raise FormatError(f"{source}: parameter name is not UTF-8") from e
        (ndim,) = reader.unpack(_U8)
        shape = struct.unpack(f"<{ndim}H", reader.take(2 * ndim))
        size = int(np.prod(shape, dtype=np.int64))
        data = np.frombuffer(reader.take(4 * size), dtype="<f4")
        arrays[name] = data.reshape(shape).astype(np.float32)
    if reader.pos != len(raw):
        raise FormatError(f"{source}: {len(raw) - reader.pos} trailing bytes")
    try:
        params = ModelParams(arrays)
    except ShapeError as e:
        raise FormatError(f"{source}: {e}") from e
    if not params.is_finite():
        raise FormatError(f"{source}: checkpoint contains non-finite values")
    return params


def save_checkpoint(path: str | os.PathLike[str], params: ModelParams) -> Path:
    """Atomically write `params` to `path`."""
    path = atomic_write_bytes(path, dumps(params))
    logger.debug(f"saved checkpoint {path} ({params.count} parameters)")
    return path


def load_checkpoint(path: str | os.PathLike[str]) -> ModelParams:
    return loads(Path(path).read_bytes(), str(path))
