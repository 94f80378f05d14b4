"""Small reverse-mode differentiation engine over numpy arrays."""
from .ops import (
    adaptive_avg_pool,
    add,
    add_channel_bias,
    affine,
    concat,
    conv1d,
    elu,
    group_norm,
    l1_loss,
    mean,
    mse_loss,
    mul,
    reshape,
    scale,
    sub,
    upsample_nearest,
)
from .optim import RMSProp, CyclicLr, RmsPropState, cyclic_lr, rmsprop_step
from .value import NDValue, Tape, active_tape, backward

__all__ = [
    "NDValue", "Tape", "active_tape", "backward",
    "adaptive_avg_pool", "add", "add_channel_bias", "affine", "concat", "conv1d", "elu",
    "group_norm", "l1_loss", "mean", "mse_loss", "mul", "reshape", "scale", "sub",
    "upsample_nearest",
    "RMSProp", "CyclicLr", "RmsPropState", "cyclic_lr", "rmsprop_step",
]
