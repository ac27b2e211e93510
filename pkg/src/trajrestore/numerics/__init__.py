from .tensor import (
    GraphError,
    NonFiniteError,
    Tensor,
    add,
    as_tensor,
    backward,
    broadcast_add,
    concat,
    gelu,
    layer_norm,
    matmul,
    mean,
    mse,
    mul,
    reshape,
    scale,
    softmax,
    sub,
    sum,
    transpose,
)
from .graph import PRIMITIVES, eval_graph, finite_diff_check
from .optim import OptimizerState, adamw_step, clip_grad_norm, global_grad_norm, lr_at_step
