from .tensor import (
    DomainError,
    ShapeError,
    Tensor,
    add,
    backward,
    clamp,
    concat,
    default_dtype,
    dense,
    dropout,
    grad_enabled,
    leaky_relu,
    log,
    matmul,
    mean,
    mul,
    no_grad,
    relu,
    reshape,
    set_default_dtype,
    sigmoid,
    sub,
    tanh,
    tensor_abs,
    tensor_sum,
    zero_grads,
)
from .convolution import conv2d, conv_transpose2d
from .normalization import batchnorm2d
from .optim import AdamState, adam_step

__all__ = [
    "AdamState",
    "DomainError",
    "ShapeError",
    "Tensor",
    "adam_step",
    "add",
    "backward",
    "batchnorm2d",
    "clamp",
    "concat",
    "conv2d",
    "conv_transpose2d",
    "default_dtype",
    "dense",
    "dropout",
    "grad_enabled",
    "leaky_relu",
    "log",
    "matmul",
    "mean",
    "mul",
    "no_grad",
    "relu",
    "reshape",
    "set_default_dtype",
    "sigmoid",
    "sub",
    "tanh",
    "tensor_abs",
    "tensor_sum",
    "zero_grads",
]
