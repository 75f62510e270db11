"""Exceptions raised by dehazeguard."""

from __future__ import annotations

__all__ = [
    "ConfigError",
    "ContractError",
    "DivergenceError",
    "FormatError",
    "ShapeError",
]


class ShapeError(ValueError):
    """Operand shapes are incompatible with the requested operation."""


class ConfigError(ValueError):
    """A configuration value is out of range or a required input is missing."""


class FormatError(ValueError):
    """A dataset or checkpoint file is corrupt, truncated or incompatible."""


class ContractError(RuntimeError):
    """An API was called in a way its contract forbids."""


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss."""
