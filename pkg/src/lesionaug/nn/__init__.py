"""Minimal numpy operator set with hand-written backward passes."""

from .checkpoint import load_checkpoint, save_checkpoint
from .functional import (
    batchnorm2d,
    bce,
    conv2d,
    conv2d_transpose,
    dense,
    dropout,
    leaky_relu,
    maxpool2d,
    relu,
    sigmoid,
    softmax,
    softmax_crossentropy,
    tanh,
)
from .layers import (
    BatchNorm2D,
    Conv2D,
    ConvTranspose2D,
    Dense,
    Dropout,
    Flatten,
    LeakyReLU,
    MaxPool2D,
    ReLU,
    Reshape,
    Sequential,
    Sigmoid,
    Tanh,
)
from .optim import Adam, AdamState, adam_step

__all__ = [
    "Adam",
    "AdamState",
    "BatchNorm2D",
    "Conv2D",
    "ConvTranspose2D",
    "Dense",
    "Dropout",
    "Flatten",
    "LeakyReLU",
    "MaxPool2D",
    "ReLU",
    "Reshape",
    "Sequential",
    "Sigmoid",
    "Tanh",
    "adam_step",
    "batchnorm2d",
    "bce",
    "conv2d",
    "conv2d_transpose",
    "dense",
    "dropout",
    "leaky_relu",
    "load_checkpoint",
    "maxpool2d",
    "relu",
    "save_checkpoint",
    "sigmoid",
    "softmax",
    "softmax_crossentropy",
    "tanh",
]
