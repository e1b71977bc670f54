"""Minimal differentiable operator core used by the model."""
from .ops import (
    BN_EPS,
    BN_MOMENTUM,
    ConvSpec,
    batch_norm,
    conv2d,
    conv_gru_step,
    deconv2d,
    glu_block,
    glu_specs,
    pointwise,
)
from .registry import ParamRegistry, count_params, glorot_uniform
from .tensor import (
    Tensor,
    add,
    backward,
    concat,
    elu,
    mean_all,
    mul,
    no_grad,
    reshape,
    sigmoid,
    square,
    sub,
    sum_all,
    tanh,
    transpose,
)
from .weights import load_weights, save_weights

__all__ = [
    "BN_EPS", "BN_MOMENTUM", "ConvSpec", "ParamRegistry", "Tensor", "add", "backward",
    "batch_norm", "concat", "conv2d", "conv_gru_step", "count_params", "deconv2d", "elu",
    "glorot_uniform", "glu_block", "glu_specs", "load_weights", "mean_all", "mul", "no_grad",
    "pointwise", "reshape", "save_weights", "sigmoid", "square", "sub", "sum_all", "tanh",
    "transpose",
]
