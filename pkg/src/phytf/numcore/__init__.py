from .tensor import (
    Tensor,
    add,
    as_tensor,
    backward,
    causal_attention,
    clip,
    concat,
    conv2d,
    div,
    exp,
    getitem,
    layer_norm,
    log,
    masked_softmax,
    matmul,
    mul,
    neg,
    overwrite_cells,
    pad2d,
    power,
    reduce_mean,
    reduce_sum,
    reshape,
    sigmoid,
    sqrt,
    sub,
    tanh,
    transpose,
    weighted_gather,
)
from .optim import AdamState, LbfgsResult, LbfgsState, adam_step, lbfgs_step

__all__ = [
    "Tensor",
    "AdamState",
    "LbfgsResult",
    "LbfgsState",
    "adam_step",
    "lbfgs_step",
    "add",
    "as_tensor",
    "backward",
    "causal_attention",
    "clip",
    "concat",
    "conv2d",
    "div",
    "exp",
    "getitem",
    "layer_norm",
    "log",
    "masked_softmax",
    "matmul",
    "mul",
    "neg",
    "overwrite_cells",
    "pad2d",
    "power",
    "reduce_mean",
    "reduce_sum",
    "reshape",
    "sigmoid",
    "sqrt",
    "sub",
    "tanh",
    "transpose",
    "weighted_gather",
]
