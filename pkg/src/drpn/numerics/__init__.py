from .gradcheck import GradReport, grad_check, grad_check_store, rel_error
from .params import (
    Adam,
    CheckpointError,
    ParamSpec,
    ParamStore,
    adam_step,
    glorot_bound,
    init_params,
    load_checkpoint,
    save_checkpoint,
)
from .tensor import (
    ShapeError,
    Tape,
    Tensor,
    add,
    as_tensor,
    concat,
    concat_cols,
    concat_rows,
    elementwise_mul,
    exp,
    index,
    layer_norm,
    log,
    logsumexp,
    matmul,
    mean,
    mul,
    relu,
    reshape,
    scalar_mul,
    sigmoid,
    softmax,
    softmax_rows,
    sub,
    sum,
    sum_rows,
    take,
    tanh,
    transpose,
)

__all__ = [
    "GradReport",
    "grad_check",
    "grad_check_store",
    "rel_error",
    "Adam",
    "CheckpointError",
    "ParamSpec",
    "ParamStore",
    "adam_step",
    "glorot_bound",
    "init_params",
    "load_checkpoint",
    "save_checkpoint",
    "ShapeError",
    "Tape",
    "Tensor",
    "add",
    "as_tensor",
    "concat",
    "concat_cols",
    "concat_rows",
    "elementwise_mul",
    "exp",
    "index",
    "layer_norm",
    "log",
    "logsumexp",
    "matmul",
    "mean",
    "mul",
    "relu",
    "reshape",
    "scalar_mul",
    "sigmoid",
    "softmax",
    "softmax_rows",
    "sub",
    "sum",
    "sum_rows",
    "take",
    "tanh",
    "transpose",
]
