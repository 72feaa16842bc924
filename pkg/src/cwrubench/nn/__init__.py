"""Minimal numpy neural-network core for WDCNN."""

from .functional import bce_with_logits, bce_with_logits_grad, sigmoid
from .model import ConfigError, ConvSpec, Network, WdcnnConfig, build_network, build_wdcnn, wdcnn_stack
from .optim import AdamState, NonFiniteGradientError, adam_step
from .train import HyperParams, TrainedModel, backward, forward, hyper_grid, load_checkpoint, save_checkpoint, train

__all__ = [
    "AdamState", "ConfigError", "ConvSpec", "HyperParams", "Network", "NonFiniteGradientError", "TrainedModel",
    "WdcnnConfig", "adam_step", "backward", "bce_with_logits", "bce_with_logits_grad", "build_network",
    "build_wdcnn", "forward", "hyper_grid", "load_checkpoint", "save_checkpoint", "sigmoid", "train",
    "wdcnn_stack",
]
