"""Minimal numeric core: tensors, differentiable primitives, reverse-mode AD."""

from .gradcheck import grad_check, numeric_grad
from .module import Module
from .ops import (add, clamp, conv2d, crop2d, depthwise_conv2d, div, exp, gather_rows,
                  layer_norm, linear, mean, mul, neg, permute_axis, relu, reshape,
                  scatter_rows, sigmoid, silu, softmax, softplus, sqrt, sub, transpose,
                  upsample_nearest2x)
from .ops import sum  # noqa: A004 - numpy-style name
from .tensor import Record, Tensor, as_tensor, backward, current_record, no_record, zero_grad

__all__ = [
    "Tensor", "Record", "Module", "as_tensor", "backward", "current_record", "no_record",
    "zero_grad", "grad_check", "numeric_grad",
    "add", "sub", "mul", "div", "neg", "exp", "sqrt", "sigmoid", "silu", "relu", "softplus",
    "clamp", "sum", "mean", "reshape", "transpose", "permute_axis", "gather_rows", "scatter_rows",
    "crop2d", "upsample_nearest2x", "conv2d", "depthwise_conv2d", "layer_norm", "linear",
    "softmax",
]
