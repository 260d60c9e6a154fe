"""Minimal float64 autodiff: tape tensors, MLP/GRU layers, Adam."""

from . import tensor
from .gradcheck import finite_diff_check
from .layers import MLPSpec, gru_step, init_gru, init_mlp, mlp_forward
from .optim import AdamState, adam_step, clip_global_norm
from .params import ParameterSet
from .tensor import Gradients, Tape, Tensor, backward, no_grad

__all__ = [
    "tensor",
    "Tensor",
    "Tape",
    "Gradients",
    "backward",
    "no_grad",
    "ParameterSet",
    "MLPSpec",
    "init_mlp",
    "mlp_forward",
    "init_gru",
    "gru_step",
    "AdamState",
    "adam_step",
    "clip_global_norm",
    "finite_diff_check",
]
