"""Minimal reverse-mode differentiation: tensors, ops, Adam, gradient checks."""

from .gradcheck import gradient_check, relative_error
from .ops import (
    add,
    apply_time_mask,
    avg_pool_time,
    bilstm_layer,
    conv2d,
    cross_entropy_loss,
    dense,
    dropout,
    flatten_freq,
    mae_loss,
    relu,
    reshape,
    same_padding,
    sigmoid,
    softmax,
    tanh,
    tsum,
)
from .optim import AdamState, adam_step
from .tensor import Tape, Tensor, backward

__all__ = [
    "AdamState", "Tape", "Tensor", "adam_step", "add", "apply_time_mask", "avg_pool_time",
    "backward", "bilstm_layer", "conv2d", "cross_entropy_loss", "dense", "dropout",
    "flatten_freq", "gradient_check", "mae_loss", "relative_error", "relu", "reshape",
    "same_padding", "sigmoid", "softmax", "tanh", "tsum",
]
