"""Minimal dense-tensor engine with reverse-mode differentiation."""
from .nn import MLP, Conv, ConvTranspose, Embedding, InstanceNorm, LayerNorm, Linear, Module, parameter
from .ops import (
    add,
    avg_pool_nd,
    concat,
    conv_nd,
    conv_transpose_nd,
    gather_weighted,
    instance_norm,
    layer_norm,
    linear,
    matmul,
    mean,
    mul,
    pad,
    relu,
    reshape,
    scatter_add,
    sub,
    take_rows,
)
from .ops import sum as reduce_sum
from .tensor import DiffTensor, as_tensor, default_dtype, get_default_dtype, no_grad, set_default_dtype

__all__ = [
    "DiffTensor", "as_tensor", "default_dtype", "get_default_dtype", "no_grad", "set_default_dtype",
    "add", "sub", "mul", "matmul", "linear", "relu", "reduce_sum", "mean", "reshape", "concat",
    "take_rows", "scatter_add", "gather_weighted", "layer_norm", "instance_norm", "pad",
    "conv_nd", "conv_transpose_nd", "avg_pool_nd",
    "Module", "Linear", "LayerNorm", "MLP", "Embedding", "Conv", "ConvTranspose", "InstanceNorm",
    "parameter",
]
