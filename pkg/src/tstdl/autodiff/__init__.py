"""Minimal reverse-mode automatic differentiation on numpy arrays."""

from .ops import (
    RunningStats,
    add,
    as_tensor,
    batchnorm,
    concat_channels,
    conv2d,
    div,
    dropout,
    leaky_relu,
    linear,
    matmul,
    maxpool2,
    mean,
    mul,
    neg,
    permute,
    relu,
    reshape,
    sqrt,
    square,
    sub,
    sum,
    upsample_nn,
)
from .optim import OptimizerState, adam, optimizer_step, sgd
from .serialize import dumps_tensors, load_tensors, loads_tensors, save_tensors
from .tensor import Tensor, backward

__all__ = [
    "Tensor", "backward", "RunningStats", "OptimizerState", "adam", "sgd", "optimizer_step",
    "add", "sub", "mul", "div", "neg", "square", "sqrt", "sum", "mean", "matmul", "linear",
    "reshape", "permute", "concat_channels", "relu", "leaky_relu", "dropout", "batchnorm",
    "conv2d", "maxpool2", "upsample_nn", "as_tensor",
    "dumps_tensors", "loads_tensors", "save_tensors", "load_tensors",
]
