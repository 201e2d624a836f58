"""Minimal reverse-mode autodiff over dense numpy arrays."""

from .gradcheck import NonFiniteError, grad_check, grad_check_many
from .ops import (
    add,
    channels,
    concat,
    conv2d,
    elementwise,
    gather_pixels,
    group_norm,
    linear,
    log_softmax,
    mul,
    pool_channel,
    pool_global,
    relu,
    reshape,
    scale,
    sigmoid,
    sub,
    sum_all,
    tanh,
    upsample2x,
)
from .tensor import GradTape, ShapeError, TapeError, Tensor, backward, parameter

__all__ = [
    "GradTape",
    "NonFiniteError",
    "ShapeError",
    "TapeError",
    "Tensor",
    "add",
    "backward",
    "channels",
    "concat",
    "conv2d",
    "elementwise",
    "gather_pixels",
    "grad_check",
    "grad_check_many",
    "group_norm",
    "linear",
    "log_softmax",
    "mul",
    "parameter",
    "pool_channel",
    "pool_global",
    "relu",
    "reshape",
    "scale",
    "sigmoid",
    "sub",
    "sum_all",
    "tanh",
    "upsample2x",
]
