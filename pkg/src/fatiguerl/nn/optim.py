"""Adam with bias correction, plus global-norm gradient clipping."""

from dataclasses import dataclass, field

import numpy as np

from ..errors import TrainingError
from .params import ParameterSet


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def state_dict(self) -> dict:
        out = {"__step__": np.array([float(self.step)])}
        for name, arr in self.m.items():
            out[f"m.{name}"] = arr.copy()
        for name, arr in self.v.items():
            out[f"v.{name}"] = arr.copy()
        return out

    def load_state_dict(self, state: dict) -> None:
        self.step = int(state["__step__"][0])
        self.m = {k[2:]: np.array(v) for k, v in state.items() if k.startswith("m.")}
        self.v = {k[2:]: np.array(v) for k, v in state.items() if k.startswith("v.")}


def clip_global_norm(grads: dict, max_norm: float) -> float:
    """Scale all grads in place so their joint L2 norm is at most max_norm."""
    total = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if total > max_norm and total > 0.0:
        scale = max_norm / total
        for g in grads.values():
            g *= scale
    return total


def adam_step(pset: ParameterSet, grads: dict, state: AdamState) -> None:
    """One optimizer step over the named grads; updates tensors in place."""
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for parameter {name!r}")
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(g)
            state.m[name] = m
            state.v[name] = np.zeros_like(g)
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        update = state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        param = pset[name]
        param.data = param.data - update
        if not np.all(np.isfinite(param.data)):
            raise TrainingError(f"non-finite value in parameter {name!r} after update")
