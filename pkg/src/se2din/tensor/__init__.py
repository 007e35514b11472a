"""Minimal dense tensors with reverse-mode differentiation."""
from .core import NonFiniteError, Parameter, ShapeError, Tape, Tensor, active_tape
from .gradcheck import GradcheckResult, gradcheck, gradcheck_report, numerical_gradient, relative_error
from .ops import (
    BatchNormState,
    batchnorm,
    conv1x1,
    conv2d_depthwise,
    conv2d_separable,
    correlation_matrix,
    dropout,
    global_maxpool,
    interleave_channels,
    relu,
    residual_add,
    softmax_cross_entropy,
    take_channels,
    weighted_sum,
)

__all__ = [
    "BatchNormState",
    "NonFiniteError",
    "Parameter",
    "ShapeError",
    "Tape",
    "Tensor",
    "active_tape",
    "batchnorm",
    "conv1x1",
    "conv2d_depthwise",
    "conv2d_separable",
    "correlation_matrix",
    "dropout",
    "global_maxpool",
    "GradcheckResult",
    "gradcheck",
    "gradcheck_report",
    "interleave_channels",
    "numerical_gradient",
    "relative_error",
    "relu",
    "residual_add",
    "softmax_cross_entropy",
    "take_channels",
    "weighted_sum",
]
