"""Small reverse-mode autodiff engine, Adam, and a gradient checker."""
from .gradcheck import grad_check, numerical_gradient
from .optim import Adam, AdamState, adam_step
from .tensor import (
    BatchNormState,
    Tensor,
    abs_squared,
    add,
    batchnorm,
    binary_cross_entropy,
    columns,
    cplx_matvec,
    cplx_unit_normalize,
    linear,
    matmul,
    mean,
    mul,
    phase_parameterize,
    relu,
    sigmoid,
    softmax,
    softmax_cross_entropy,
    sub,
    to_db,
    tsum,
)

__all__ = [
    "Adam", "AdamState", "BatchNormState", "Tensor", "abs_squared", "adam_step", "add",
    "batchnorm", "binary_cross_entropy", "columns", "cplx_matvec", "cplx_unit_normalize",
    "grad_check", "linear", "matmul", "mean", "mul", "numerical_gradient",
    "phase_parameterize", "relu", "sigmoid", "softmax", "softmax_cross_entropy", "sub",
    "to_db", "tsum",
]
