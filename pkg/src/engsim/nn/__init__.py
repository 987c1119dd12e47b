"""Minimal trainable network kernel on numpy arrays.

Activations use a maps-major layout (C, N, H, W): feature maps first, batch
second. Layers implement explicit forward/backward passes; ModelGraph chains
them, Adam updates them, and the training loop applies early stopping on
validation accuracy.
"""

from .layers import (
    AvgPool,
    BatchNorm,
    Conv2d,
    Dense,
    DepthwiseConv2d,
    Dropout,
    ELU,
    Flatten,
    FrameSplit,
    InceptionModule,
    Layer,
    LSTMLayer,
    MaxPool,
    Parameter,
    ReLU,
    ResidualBlock,
    SeparableConv2d,
    SlidingMaxPool,
    Softmax,
    TwinConvAdd,
    lstm_cell,
)
from .losses import CrossEntropyLoss, one_hot
from .model import ModelGraph, load_checkpoint, save_checkpoint
from .optim import Adam
from .train import TrainConfig, TrainHistory, train

__all__ = [
    "Adam",
    "AvgPool",
    "BatchNorm",
    "Conv2d",
    "CrossEntropyLoss",
    "Dense",
    "DepthwiseConv2d",
    "Dropout",
    "ELU",
    "Flatten",
    "FrameSplit",
    "InceptionModule",
    "LSTMLayer",
    "Layer",
    "MaxPool",
    "ModelGraph",
    "Parameter",
    "ReLU",
    "ResidualBlock",
    "SeparableConv2d",
    "SlidingMaxPool",
    "Softmax",
    "TrainConfig",
    "TrainHistory",
    "TwinConvAdd",
    "load_checkpoint",
    "lstm_cell",
    "one_hot",
    "save_checkpoint",
    "train",
]
