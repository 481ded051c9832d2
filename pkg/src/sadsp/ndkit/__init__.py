"""Minimal reverse-mode autodiff kit used by the whole package.

Flat float64 tensors, a kernel backend that prefers the compiled extension
and falls back to pure Python, and Adam with decoupled weight decay.
"""

from .backend import backend_name
from .optim import Adam
from .tensor import (
    LOG_FLOOR,
    Tensor,
    add,
    add_bias,
    backward,
    full,
    log,
    matmul,
    mean_all,
    mul,
    neg,
    no_grad,
    pick,
    relu,
    rsub,
    scale,
    sigmoid,
    slice_cols,
    softmax,
    sub,
    sum_all,
    tensor,
    zeros,
)

__all__ = [
    "LOG_FLOOR",
    "Adam",
    "Tensor",
    "add",
    "add_bias",
    "backend_name",
    "backward",
    "full",
    "log",
    "matmul",
    "mean_all",
    "mul",
    "neg",
    "no_grad",
    "pick",
    "relu",
    "rsub",
    "scale",
    "sigmoid",
    "slice_cols",
    "softmax",
    "sub",
    "sum_all",
    "tensor",
    "zeros",
]
