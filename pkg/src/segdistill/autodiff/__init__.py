"""Minimal reverse-mode tensor engine."""

from .gradcheck import fd_gradient_check
from .ops import (
    PROB_FLOOR,
    RunningStats,
    activation,
    batch_norm,
    categorical_cross_entropy,
    concat_channels,
    conv2d,
    dense,
    depthwise_conv2d,
    global_avg_pool,
    one_hot,
    residual_add,
    softmax,
    transpose_conv2d,
)
from .optim import NonFiniteGradientError, OptimizerState, optimizer_step
from .tensor import GradTape, ShapeError, Tensor, backward

__all__ = [
    "GradTape", "NonFiniteGradientError", "OptimizerState", "PROB_FLOOR", "RunningStats",
    "ShapeError", "Tensor", "activation", "backward", "batch_norm", "categorical_cross_entropy",
    "concat_channels", "conv2d", "dense", "depthwise_conv2d", "fd_gradient_check",
    "global_avg_pool", "one_hot", "optimizer_step", "residual_add", "softmax",
    "transpose_conv2d",
]
