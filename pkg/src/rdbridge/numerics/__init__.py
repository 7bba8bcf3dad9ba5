"""Tensor arithmetic, reverse-mode autodiff, gradient checking and Adam."""
from .gradcheck import finite_diff_check
from .optim import Adam, AdamState, adam_step
from .tensor import (
    Tensor, add, as_tensor, concat, div, dropout, exp_op, first_nonfinite_op, gelu,
    get_default_dtype, getitem, l2_normalize, layer_norm, log_op, log_softmax, matmul,
    maximum0, mean, mul, power, relu, reshape, set_default_dtype, sigmoid, softmax,
    softmax_rows, sqrt_op, stack, sub, take_rows, tanh_op, transpose, tsum,
)

__all__ = [
    "Adam", "AdamState", "Tensor", "adam_step", "add", "as_tensor", "concat", "div",
    "dropout", "exp_op", "finite_diff_check", "first_nonfinite_op", "gelu",
    "get_default_dtype", "getitem", "l2_normalize", "layer_norm", "log_op", "log_softmax",
    "matmul", "maximum0", "mean", "mul", "power", "relu", "reshape", "set_default_dtype",
    "sigmoid", "softmax", "softmax_rows", "sqrt_op", "stack", "sub", "take_rows",
    "tanh_op", "transpose", "tsum",
]
