"""Minimal numpy network stack hosting the FlowTIE vector-field predictor."""
from .gradcheck import gradcheck
from .layers import GELU, BatchNorm2d, Conv2d
from .losses import loss_cont, loss_phase, loss_total, loss_vf
from .model import FlowModel
from .optim import AdamW
from .train import TrainConfig, Trainer, train_flowtie

__all__ = [
    "AdamW", "BatchNorm2d", "Conv2d", "FlowModel", "GELU", "TrainConfig", "Trainer",
    "gradcheck", "loss_cont", "loss_phase", "loss_total", "loss_vf", "train_flowtie",
]
