"""Tensors with reverse-mode automatic differentiation."""

from ._gradcheck import finite_diff_grad
from ._ops import (
    add,
    add_scalar,
    clamp01,
    concat_channels,
    conv2d,
    conv_output_size,
    div,
    elementwise,
    gaussian_blur,
    mean,
    mul,
    relu,
    reshape,
    scale,
    square,
    sub,
    sum,
)
from ._tensor import Tape, Tensor, as_tensor, backward, backward_calls

__all__ = [
    "Tape",
    "Tensor",
    "add",
    "add_scalar",
    "as_tensor",
    "backward",
    "backward_calls",
    "clamp01",
    "concat_channels",
    "conv2d",
    "conv_output_size",
    "div",
    "elementwise",
    "finite_diff_grad",
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
