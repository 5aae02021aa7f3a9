"""Dense float32 tensors with reverse-mode automatic differentiation.

The operator set is exactly what the segmentation and classification networks
need: 3-D convolution and its transpose, instance normalization, PReLU,
linear layers, channel concatenation, global average pooling, pointwise ops,
the three training losses, Adam, and a finite-difference gradient checker.
"""

from .tensor import (
    Tensor,
    ShapeMismatch,
    NotScalar,
    no_grad,
    set_debug_checks,
    backward,
    add,
    add_residual,
    mul,
    sigmoid,
    softmax,
    prelu,
    instance_norm,
    linear,
    concat_channels,
    global_avg_pool,
)
from .conv import conv3d, conv3d_transpose
from .losses import soft_dice_loss, weighted_bce, softmax_cross_entropy
from .optim import AdamState, adam_step, Adam
from .gradcheck import grad_check

__all__ = [
    "Tensor", "ShapeMismatch", "NotScalar", "no_grad", "set_debug_checks",
    "backward", "add", "add_residual", "mul", "sigmoid", "softmax", "prelu",
    "instance_norm", "linear", "concat_channels", "global_avg_pool",
    "conv3d", "conv3d_transpose",
    "soft_dice_loss", "weighted_bce", "softmax_cross_entropy",
    "AdamState", "adam_step", "Adam", "grad_check",
]
