from .tensor import Graph, ShapeError, Tensor, as_tensor, backward
from .ops import (
    absdiff,
    add,
    concat,
    lstm_sequence,
    matmul,
    max_over_axis,
    mean,
    mul,
    neg,
    relu,
    reshape,
    scale,
    scatter_rows,
    select,
    sigmoid,
    slice_last,
    softmax,
    softplus,
    stack,
    sub,
    sum,
    take_rows,
    tanh,
    where,
)
from .losses import categorical_logloss, mse_loss, multilabel_logloss
from .optim import AdamState, adam_step
from .gradcheck import gradcheck

__all__ = [
    "AdamState", "Graph", "ShapeError", "Tensor", "absdiff", "adam_step", "add",
    "as_tensor", "backward", "categorical_logloss", "concat", "gradcheck",
    "lstm_sequence", "matmul", "max_over_axis", "mean", "mse_loss", "mul", "multilabel_logloss",
    "neg", "relu", "reshape", "scale", "scatter_rows", "select", "sigmoid", "slice_last",
    "softmax", "softplus", "stack", "sub", "sum", "take_rows", "tanh", "where",
]
