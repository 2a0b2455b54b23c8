"""Minimal reverse-mode differentiation over numpy arrays."""

from . import functional
from .checkpoint import load_checkpoint, save_checkpoint
from .functional import (
    batch_norm2d,
    bilinear_upsample2x,
    concat_channels,
    conv2d,
    global_avg_pool,
    linear,
    mse_loss,
    relu,
    softmax_cross_entropy,
)
from .gradcheck import finite_difference_check, spot_check
from .nn import BatchNorm2d, Conv2d, ConvBNReLU, Linear, Module, Parameter
from .optim import LARS, SGD, lars_step, make_optimizer, sgd_step, warmup_linear_decay
from .tensor import Tensor, no_grad

__all__ = [
    "BatchNorm2d", "Conv2d", "ConvBNReLU", "LARS", "Linear", "Module", "Parameter", "SGD",
    "Tensor", "batch_norm2d", "bilinear_upsample2x", "concat_channels", "conv2d",
    "finite_difference_check", "functional", "global_avg_pool", "lars_step", "linear",
    "load_checkpoint", "make_optimizer", "mse_loss", "no_grad", "relu", "save_checkpoint",
    "sgd_step", "softmax_cross_entropy", "spot_check", "warmup_linear_decay",
]
