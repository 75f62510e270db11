"""Central finite differences, the oracle that `backward` is tested against."""

from __future__ import annotations

from typing import TYPE_CHECKING

import numpy as np

from dehazeguard._errors import ConfigError

from ._tensor import Tensor

if TYPE_CHECKING:
    from typing import Callable


def _as_float(value: Tensor | float) -> float:
    return value.item() if isinstance(value, Tensor) else float(value)


def finite_diff_grad(
    f: Callable[[Tensor], Tensor | float], x: Tensor, h: float = 1e-3
) -> Tensor:
    """Estimate d f / d x elementwise as ``(f(x + h e) - f(x - h e)) / 2h``.

    `f` must be deterministic and return a scalar. `x` is not modified.
    """
    if h <= 0:
        raise ConfigError(f"finite difference step must be positive, got {h}")
    base = x.data
    grad = np.empty(base.shape, dtype=np.float64)
    shifted = base.copy()
    flat = shifted.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = _as_float(f(Tensor(shifted, dtype=base.dtype)))
        flat[i] = orig - h
        down = _as_float(f(Tensor(shifted, dtype=base.dtype)))
        flat[i] = orig
        grad.reshape(-1)[i] = (up - down) / (2 * h)
    return Tensor(grad, dtype=base.dtype)
