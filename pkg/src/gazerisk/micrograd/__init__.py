"""Small float64 layer library with hand-derived gradients."""

from .layers import (
    LSTM,
    Conv2d,
    Linear,
    Module,
    NonFiniteError,
    ShapeError,
    Tanh,
    check_finite,
    cross_entropy,
    mse,
    sigmoid,
    softmax,
    softmax_backward,
    softmax_cross_entropy,
)
from .optim import Adam, AdamState, adam_step

__all__ = [
    "LSTM",
    "Adam",
    "AdamState",
    "Conv2d",
    "Linear",
    "Module",
    "NonFiniteError",
    "ShapeError",
    "Tanh",
    "adam_step",
    "check_finite",
    "cross_entropy",
    "mse",
    "sigmoid",
    "softmax",
    "softmax_backward",
    "softmax_cross_entropy",
]
