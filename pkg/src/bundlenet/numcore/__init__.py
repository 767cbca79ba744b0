"""Numeric substrate: CSR storage, the differentiation tape, Adam."""
from bundlenet.numcore import _kernels as kernels
from bundlenet.numcore.autodiff import (
    Tape,
    Var,
    add,
    concat_cols,
    matmul,
    mean,
    mul,
    relu,
    row_select,
    scale,
    sigmoid,
    softplus,
    spmm,
    sub,
    sum_squares,
    total,
)
from bundlenet.numcore.optim import AdamState, adam_step
from bundlenet.numcore.sparse import CSRMatrix

__all__ = [
    "AdamState", "CSRMatrix", "Tape", "Var", "add", "adam_step", "concat_cols", "kernels",
    "matmul", "mean", "mul", "relu", "row_select", "scale", "sigmoid", "softplus", "spmm",
    "sub", "sum_squares", "total",
]
