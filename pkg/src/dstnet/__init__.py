"""Dual-stream, prior-guided transformer for low-light image enhancement."""
from .kernels import BACKEND as KERNEL_BACKEND
from .losses import LossWeights, total_loss
from .model import DSTNet, EnhanceOutput, ModelConfig, apply_curves
from .train import TrainConfig, lr_at, train

__version__ = "0.1.0"

__all__ = [
    "DSTNet",
    "EnhanceOutput",
    "KERNEL_BACKEND",
    "LossWeights",
    "ModelConfig",
    "TrainConfig",
    "apply_curves",
    "lr_at",
    "total_loss",
    "train",
]
