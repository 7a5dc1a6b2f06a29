"""Dense tensors, reverse-mode autodiff and gradient checking."""

from .functional import (
    DegenerateRowError,
    adaptive_avg_pool2d,
    adaptive_bins,
    conv2d,
    dropout,
    leaky_relu,
    linear,
    log_softmax,
    masked_softmax,
    prelu,
    softmax,
)
from .gradcheck import GradCheckResult, finite_diff_check, relative_error
from .tensor import (
    DimensionError,
    GraphError,
    NonFiniteError,
    Tape,
    Tensor,
    add,
    as_tensor,
    backward,
    concat,
    div,
    exp,
    getitem,
    log,
    matmul,
    mean,
    mean_pool,
    mul,
    neg,
    power,
    reshape,
    stack,
    sub,
    sum_,
    transpose,
)

__all__ = [
    "DegenerateRowError",
    "DimensionError",
    "GradCheckResult",
    "GraphError",
    "NonFiniteError",
    "Tape",
    "Tensor",
    "adaptive_avg_pool2d",
    "adaptive_bins",
    "add",
    "as_tensor",
    "backward",
    "concat",
    "conv2d",
    "div",
    "dropout",
    "exp",
    "finite_diff_check",
    "getitem",
    "leaky_relu",
    "linear",
    "log",
    "log_softmax",
    "masked_softmax",
    "matmul",
    "mean",
    "mean_pool",
    "mul",
    "neg",
    "power",
    "prelu",
    "relative_error",
    "reshape",
    "softmax",
    "stack",
    "sub",
    "sum_",
    "transpose",
]
