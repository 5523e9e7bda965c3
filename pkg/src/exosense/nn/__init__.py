"""Minimal numpy neural-network engine with layer-wise reverse-mode differentiation."""

from .core import Module, Tensor
from .gradcheck import grad_check
from .graph import build_layer, build_model, build_sequential, encoder_layers, receptive_field
from .layers import (
    AvgPool1d, Conv1d, Fusion, Linear, Readout, ReLU, ResidualBlock, SEBlock, Sequential, Sigmoid, Softmax,
    conv1d, sigmoid, softmax, tcn_receptive_field,
)
from .losses import Loss, focal_loss, focal_loss_logits, mse_loss, softmax_cross_entropy
from .optim import Adam, AdamState, adam_step
from .serialize import load_weights, save_weights, spec_hash
from .train import History, TrainConfig, evaluate_loss, train

__all__ = [
    "Adam", "AdamState", "AvgPool1d", "Conv1d", "Fusion", "History", "Linear", "Loss", "Module", "Readout", "ReLU",
    "ResidualBlock", "SEBlock", "Sequential", "Sigmoid", "Softmax", "Tensor", "TrainConfig",
    "adam_step", "build_layer", "build_model", "build_sequential", "conv1d", "encoder_layers",
    "evaluate_loss", "focal_loss", "focal_loss_logits", "grad_check", "load_weights", "mse_loss",
    "receptive_field", "save_weights", "sigmoid", "softmax", "softmax_cross_entropy", "spec_hash",
    "tcn_receptive_field", "train",
]
