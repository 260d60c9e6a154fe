"""MLP and GRU building blocks on top of the tape tensors.

Layers are functional: parameters live in a ParameterSet under a prefix, and
forward functions take the set plus input tensors. Shapes are validated at the
boundary so a wiring mistake names the offending layer instead of surfacing as
a numpy broadcast error three calls deeper.
"""

from dataclasses import dataclass, field

import numpy as np

from ..errors import DimensionError
from . import tensor as T
from .params import ParameterSet
from .tensor import Tensor

_ACTS = {
    "tanh": T.tanh,
    "relu": T.relu,
    "sigmoid": T.sigmoid,
    "softplus": T.softplus,
    "identity": lambda t: t,
}


@dataclass
class MLPSpec:
    """Fully connected stack: sizes [in, h1, ..., out]."""

    sizes: list = field(default_factory=list)
    hidden_act: str = "tanh"
    out_act: str = "identity"

    @property
    def n_layers(self) -> int:
        return len(self.sizes) - 1


def init_mlp(pset: ParameterSet, prefix: str, spec: MLPSpec,
             rng: np.random.Generator, trainable: bool = True):
    """Glorot-uniform weights, zero biases, registered as {prefix}.W{i}/b{i}."""
    for i in range(spec.n_layers):
        fan_in, fan_out = spec.sizes[i], spec.sizes[i + 1]
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        pset.add(f"{prefix}.W{i}", rng.uniform(-limit, limit, (fan_in, fan_out)),
                 trainable=trainable)
        pset.add(f"{prefix}.b{i}", np.zeros(fan_out), trainable=trainable)


def mlp_forward(pset: ParameterSet, prefix: str, spec: MLPSpec, x: Tensor) -> Tensor:
    if x.data.ndim != 2 or x.data.shape[1] != spec.sizes[0]:
        raise DimensionError(
            f"{prefix}: expected input [batch, {spec.sizes[0]}], got {x.data.shape}"
        )
    h = x
    for i in range(spec.n_layers):
        h = T.matmul(h, pset[f"{prefix}.W{i}"]) + pset[f"{prefix}.b{i}"]
        act = spec.hidden_act if i < spec.n_layers - 1 else spec.out_act
        h = _ACTS[act](h)
    return h


def init_gru(pset: ParameterSet, prefix: str, in_dim: int, hid_dim: int,
             rng: np.random.Generator):
    """One GRU cell; all weights uniform in +-sqrt(1/hid_dim), biases zero."""
    limit = np.sqrt(1.0 / hid_dim)
    for gate in ("z", "r", "n"):
        pset.add(f"{prefix}.Wi{gate}", rng.uniform(-limit, limit, (in_dim, hid_dim)))
        pset.add(f"{prefix}.Wh{gate}", rng.uniform(-limit, limit, (hid_dim, hid_dim)))
        pset.add(f"{prefix}.b{gate}", np.zeros(hid_dim))


def gru_step(pset: ParameterSet, prefix: str, x: Tensor, h_prev: Tensor) -> Tensor:
    """Single GRU update: h' = z*h_prev + (1-z)*n.

    With the update gate z saturated at 1 the new state equals h_prev exactly,
    so long-range memory is representable without residual hacks.
    """
    if x.data.shape[0] != h_prev.data.shape[0]:
        raise DimensionError(
            f"{prefix}: batch mismatch x {x.data.shape} vs h {h_prev.data.shape}"
        )
    z = T.sigmoid(
        T.matmul(x, pset[f"{prefix}.Wiz"])
        + T.matmul(h_prev, pset[f"{prefix}.Whz"])
        + pset[f"{prefix}.bz"]
    )
    r = T.sigmoid(
        T.matmul(x, pset[f"{prefix}.Wir"])
        + T.matmul(h_prev, pset[f"{prefix}.Whr"])
        + pset[f"{prefix}.br"]
    )
    n = T.tanh(
        T.matmul(x, pset[f"{prefix}.Win"])
        + r * T.matmul(h_prev, pset[f"{prefix}.Whn"])
        + pset[f"{prefix}.bn"]
    )
    return z * h_prev + (1.0 - z) * n
