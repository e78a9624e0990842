"""Small reverse-mode autodiff over numpy arrays, sized for the MG-Net model."""

from .gradcheck import check_gradients, numeric_grad, relative_error
from .io import checkpoint_bytes, load_checkpoint, parse_checkpoint, save_checkpoint
from .ops import (
    add,
    broadcast_to,
    concat,
    conv2d,
    cross_entropy,
    elementwise_mul,
    global_avg_pool,
    linear,
    maxpool2d,
    mse_loss,
    relu,
    reshape,
    scale,
    softmax,
    sum,
    transposed_conv2d,
)
from .optim import glorot_uniform, sgd_step, zero_grad
from .tensor import NonFiniteError, Parameter, Tensor, as_tensor, backward

__all__ = [
    "NonFiniteError",
    "Parameter",
    "Tensor",
    "add",
    "as_tensor",
    "backward",
    "broadcast_to",
    "check_gradients",
    "checkpoint_bytes",
    "concat",
    "conv2d",
    "cross_entropy",
    "elementwise_mul",
    "global_avg_pool",
    "glorot_uniform",
    "linear",
    "load_checkpoint",
    "maxpool2d",
    "mse_loss",
    "numeric_grad",
    "parse_checkpoint",
    "relative_error",
    "relu",
    "reshape",
    "save_checkpoint",
    "scale",
    "sgd_step",
    "softmax",
    "sum",
    "transposed_conv2d",
    "zero_grad",
]
