"""Minimal differentiable-network substrate shared by the learned stages."""
from .checkpoint import (CheckpointError, load_into, param_digest, read_checkpoint,
                         save_checkpoint)
from .core import (Adam, AdamState, GradCheckResult, adam_step, bce, bce_loss,
                   forward_backward, grad_check, set_deterministic, trainable)
from .layers import (MultiScaleBlock, Upsample2, build_sequential, freeze, he_uniform_,
                     make_layer, param_count)
from .training import FitResult, TrainConfig, fit

__all__ = [
    "Adam", "AdamState", "CheckpointError", "FitResult", "GradCheckResult",
    "MultiScaleBlock", "TrainConfig", "Upsample2", "adam_step", "bce", "bce_loss",
    "build_sequential", "fit", "forward_backward", "freeze", "grad_check",
    "he_uniform_", "load_into", "make_layer", "param_count", "param_digest",
    "read_checkpoint", "save_checkpoint", "set_deterministic", "trainable",
]
