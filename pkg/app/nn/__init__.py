"""Numpy CNN-LSTM classifier: layers, network assembly, Adam, training and checkpoints."""

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .gradcheck import GradcheckResult, gradient_check, miniature_config
from .network import Network, NetworkConfig, build_network, forward, parameter_shapes, tail_input_shape
from .optim import OptimizerState, adam_step
from .parameters import Parameters
from .training import FitResult, TrainConfig, fit, predict, sweep

__all__ = [
    "Checkpoint",
    "FitResult",
    "GradcheckResult",
    "Network",
    "NetworkConfig",
    "OptimizerState",
    "Parameters",
    "TrainConfig",
    "adam_step",
    "build_network",
    "fit",
    "forward",
    "gradient_check",
    "load_checkpoint",
    "miniature_config",
    "parameter_shapes",
    "predict",
    "save_checkpoint",
    "sweep",
    "tail_input_shape",
]
