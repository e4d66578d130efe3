"""Dense tensors with tape-based reverse-mode differentiation."""
from .core import (AutodiffError, Tape, Tensor, active_tape, backward, debug_enabled,
                   no_record, set_debug, zero_grad)
from .nn import ConfigurationError, batchnorm2d, conv2d, conv_transpose2d, maxpool2x2
from .ops import (ShapeError, add, clip, concat_channels, div, log, mean, mul, mul_scalar,
                  narrow, pow_scalar, relu, reshape, sigmoid, square, sub, take)
from .ops import sum as sum  # noqa: F401  (shadows builtin only inside this namespace)
from .optim import Adam, AdamState, adam_step

__all__ = [
    "Adam", "AdamState", "AutodiffError", "ConfigurationError", "ShapeError", "Tape", "Tensor",
    "active_tape", "adam_step", "add", "backward", "batchnorm2d", "clip", "concat_channels",
    "conv2d", "conv_transpose2d", "debug_enabled", "div", "log", "maxpool2x2", "mean", "mul",
    "mul_scalar", "narrow", "no_record", "pow_scalar", "relu", "reshape", "set_debug", "sigmoid",
    "square", "sub", "sum", "take", "zero_grad",
]
