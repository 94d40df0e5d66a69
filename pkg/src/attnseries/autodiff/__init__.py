"""Minimal reverse-mode automatic differentiation engine."""

from .ops import (
    ACTIVATIONS,
    BNState,
    activation,
    avg_pool1d,
    batch_norm,
    conv1d,
    dropout,
    global_max_time,
    layer_norm,
    log_softmax,
    pool,
    relu,
    sigmoid,
    softmax,
    tanh,
)
from .recurrent import gru_sequence, lstm_sequence
from .tensor import (
    Tape,
    Tensor,
    active_tape,
    add,
    as_tensor,
    backward,
    concat,
    custom_op,
    div,
    exp,
    flip,
    getitem,
    log,
    matmul,
    mean,
    mul,
    power,
    reshape,
    sqrt,
    sub,
    take,
    tmax,
    transpose,
    tsum,
)

__all__ = [
    "ACTIVATIONS", "BNState", "Tape", "Tensor", "activation", "active_tape", "add",
    "as_tensor", "avg_pool1d", "backward", "batch_norm", "concat", "conv1d", "custom_op",
    "div", "dropout", "exp", "flip", "getitem", "global_max_time", "gru_sequence",
    "layer_norm", "log", "log_softmax", "lstm_sequence", "matmul", "mean", "mul", "pool",
    "power", "relu", "reshape", "sigmoid", "softmax", "sqrt", "sub", "take", "tanh",
    "tmax", "transpose", "tsum",
]
