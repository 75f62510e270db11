"""Differentiable operations on `Tensor`.

Every op checks shapes strictly; the only broadcast allowed is a conv bias over
channels. Reductions accumulate in float64 and cast back to the operand dtype.
"""

from __future__ import annotations

from typing import TYPE_CHECKING, Literal

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from dehazeguard._errors import ConfigError, ShapeError

from ._tensor import Tensor

if TYPE_CHECKING:
    from typing import TypeAlias

    ElementwiseKind: TypeAlias = Literal[
        "add", "sub", "mul", "div", "relu", "clamp01", "scale", "concat-channels"
    ]

__all__ = [
    "add",
    "add_scalar",
    "clamp01",
    "concat_channels",
    "conv2d",
    "conv_output_size",
    "div",
    "elementwise",
    "gaussian_blur",
    "mean",
    "mul",
    "relu",
    "reshape",
    "scale",
    "square",
    "sub",
    "sum",
]


def _same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: operand shapes differ, {a.shape} vs {b.shape}")


# ------------------- pointwise -------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("add", a, b)
    return Tensor._from_op(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("sub", a, b)
    return Tensor._from_op(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("mul", a, b)
    x, y = a.data, b.data
    return Tensor._from_op(x * y, (a, b), lambda g: (g * y, g * x), "mul")


def div(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("div", a, b)
    x, y = a.data, b.data
    out = x / y
    return Tensor._from_op(out, (a, b), lambda g: (g / y, -g * out / y), "div")


def square(x: Tensor) -> Tensor:
    v = x.data
    return Tensor._from_op(v * v, (x,), lambda g: (2 * g * v,), "square")


def scale(x: Tensor, factor: float) -> Tensor:
    f = x.data.dtype.type(factor)
    return Tensor._from_op(x.data * f, (x,), lambda g: (g * f,), "scale")


def add_scalar(x: Tensor, value: float) -> Tensor:
    c = x.data.dtype.type(value)
    return Tensor._from_op(x.data + c, (x,), lambda g: (g,), "add_scalar")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return Tensor._from_op(
        np.where(mask, x.data, 0).astype(x.dtype), (x,), lambda g: (g * mask,), "relu"
    )


def clamp01(x: Tensor) -> Tensor:
    # zero gradient at (and beyond) the boundaries
    inside = (x.data > 0) & (x.data < 1)
    return Tensor._from_op(
        np.clip(x.data, 0, 1), (x,), lambda g: (g * inside,), "clamp01"
    )


def concat_channels(*xs: Tensor) -> Tensor:
    if not xs:
        raise ShapeError("concat_channels needs at least one operand")
    n, _, h, w = _check_4d("concat_channels", xs[0])
    for x in xs[1:]:
        xn, _, xh, xw = _check_4d("concat_channels", x)
        if (xn, xh, xw) != (n, h, w):
            raise ShapeError(
                f"concat_channels: N,H,W must match, {xs[0].shape} vs {x.shape}"
            )
    splits = np.cumsum([x.shape[1] for x in xs])[:-1]

    def rule(g: np.ndarray) -> list[np.ndarray]:
        return np.split(g, splits, axis=1)

    return Tensor._from_op(
        np.concatenate([x.data for x in xs], axis=1), tuple(xs), rule, "concat"
    )


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    if int(np.prod(shape)) != x.size:
        raise ShapeError(f"cannot reshape {x.shape} into {shape}")
    src = x.shape
    return Tensor._from_op(
        x.data.reshape(shape), (x,), lambda g: (g.reshape(src),), "reshape"
    )


def elementwise(
    kind: ElementwiseKind, *operands: Tensor, factor: float = 1.0
) -> Tensor:
    """Apply a pointwise op by name.

    ``scale`` multiplies its single operand by `factor`; ``concat-channels`` takes
    any number of operands.
    """
    if kind == "concat-channels":
        return concat_channels(*operands)
    if kind in ("relu", "clamp01", "scale"):
        if len(operands) != 1:
            raise ShapeError(f"{kind} takes one operand, got {len(operands)}")
        (x,) = operands
        if kind == "relu":
            return relu(x)
        if kind == "clamp01":
            return clamp01(x)
        return scale(x, factor)
    binary = {"add": add, "sub": sub, "mul": mul, "div": div}
    if kind not in binary:
        raise ConfigError(f"unknown elementwise kind {kind!r}")
    if len(operands) != 2:
        raise ShapeError(f"{kind} takes two operands, got {len(operands)}")
    return binary[kind](*operands)


# ------------------- reductions -------------------


def sum(x: Tensor) -> Tensor:  # noqa: A001
    total = np.asarray(np.sum(x.data, dtype=np.float64), dtype=x.dtype)
    shape, dtype = x.shape, x.dtype
    return Tensor._from_op(
        total, (x,), lambda g: (np.full(shape, g, dtype=dtype),), "sum"
    )


def mean(x: Tensor) -> Tensor:
    n = x.size
    avg = np.asarray(np.sum(x.data, dtype=np.float64) / n, dtype=x.dtype)
    shape, dtype = x.shape, x.dtype
    return Tensor._from_op(
        avg, (x,), lambda g: (np.full(shape, g / n, dtype=dtype),), "mean"
    )


# ------------------- convolution -------------------


def _check_4d(op: str, x: Tensor) -> tuple[int, int, int, int]:
    if x.data.ndim != 4:
        raise ShapeError(f"{op}: expected a 4-D (N, C, H, W) tensor, got {x.shape}")
    n, c, h, w = x.shape
    return n, c, h, w


def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    """Spatial output length of a convolution along one axis."""
    return (size + 2 * padding - kernel) // stride + 1


def conv2d(
    input: Tensor,  # noqa: A002
    weight: Tensor,
    bias: Tensor | None = None,
    stride: int = 1,
    padding: int = 0,
) -> Tensor:
    """2-D cross-correlation of ``(N, C, H, W)`` input with ``(O, C, kh, kw)`` weight.

    Parameters
    ----------
    input : Tensor
        Batch of images.
    weight : Tensor
        Filters.
    bias : Tensor | None
        Per-output-channel offset of shape ``(O,)``.
    stride : int
        Step between windows, >= 1.
    padding : int
        Zero padding added on every spatial border, >= 0.

    Returns
    -------
    Tensor
        ``(N, O, Ho, Wo)`` with ``Ho = (H + 2 * padding - kh) // stride + 1``.
    """
    if stride < 1 or padding < 0:
        raise ConfigError(
            f"conv2d: need stride >= 1 and padding >= 0, got {stride=}, {padding=}"
        )
    n, c, h, w = _check_4d("conv2d", input)
    if weight.data.ndim != 4:
        raise ShapeError(f"conv2d: weight must be (O, C, kh, kw), got {weight.shape}")
    o, wc, kh, kw = weight.shape
    if wc != c:
        raise ShapeError(f"conv2d: input has {c} channels but weight expects {wc}")
    if kh > h + 2 * padding or kw > w + 2 * padding:
        raise ShapeError(
            f"conv2d: kernel {(kh, kw)} larger than padded input "
            f"{(h + 2 * padding, w + 2 * padding)}"
        )
    if bias is not None and bias.shape != (o,):
        raise ShapeError(f"conv2d: bias must have shape ({o},), got {bias.shape}")

    ho = conv_output_size(h, kh, stride, padding)
    wo = conv_output_size(w, kw, stride, padding)
    pad = ((0, 0), (0, 0), (padding, padding), (padding, padding))
    xp = np.pad(input.data, pad) if padding else input.data
    # (N, C, Ho, Wo, kh, kw) view, no copy until the float64 cast below
    windows = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    windows64 = windows.astype(np.float64)
    w64 = weight.data.astype(np.float64)
    out = np.tensordot(windows64, w64, axes=([1, 4, 5], [1, 2, 3]))
    out = out.transpose(0, 3, 1, 2)
    if bias is not None:
        out = out + bias.data.astype(np.float64)[None, :, None, None]
    out_dtype = input.dtype

    def rule(g: np.ndarray) -> tuple[np.ndarray | None, ...]:
        g64 = g.astype(np.float64)
        grad_x = grad_w = grad_b = None
        if input.requires_grad:
            cols = np.tensordot(g64, w64, axes=([1], [0]))  # (N, Ho, Wo, C, kh, kw)
            gxp = np.zeros(xp.shape, dtype=np.float64)
            hspan = stride * (ho - 1) + 1
            wspan = stride * (wo - 1) + 1
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i : i + hspan : stride, j : j + wspan : stride] += cols[
                        :, :, :, :, i, j
                    ].transpose(0, 3, 1, 2)
            grad_x = gxp[:, :, padding : padding + h, padding : padding + w]
        if weight.requires_grad:
            grad_w = np.tensordot(g64, windows64, axes=([0, 2, 3], [0, 2, 3]))
        if bias is not None and bias.requires_grad:
            grad_b = g64.sum(axis=(0, 2, 3))
        return (grad_x, grad_w) if bias is None else (grad_x, grad_w, grad_b)

    parents = (input, weight) if bias is None else (input, weight, bias)
    return Tensor._from_op(out.astype(out_dtype), parents, rule, "conv2d")


def gaussian_blur(x: Tensor, kernel: np.ndarray) -> Tensor:
    """Filter every channel of `x` with the same 2-D `kernel` (valid region only).

    The kernel is a constant; gradients flow to `x` only.
    """
    n, c, h, w = _check_4d("gaussian_blur", x)
    kh, kw = kernel.shape
    if kh > h or kw > w:
        raise ShapeError(f"image {(h, w)} is smaller than the {(kh, kw)} window")
    planes = reshape(x, (n * c, 1, h, w))
    weight = Tensor(kernel[None, None], dtype=x.dtype)
    out = conv2d(planes, weight)
    return reshape(out, (n, c, h - kh + 1, w - kw + 1))
