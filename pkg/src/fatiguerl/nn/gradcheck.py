"""Central-difference gradient verification for tape-computed gradients."""

import numpy as np

from .params import ParameterSet
from .tensor import Tape


def finite_diff_check(loss_fn, pset: ParameterSet, eps: float = 1e-6,
                      grads: dict = None) -> float:
    """Max relative error between tape gradients and central differences.

    `loss_fn()` must evaluate the loss from the current contents of `pset` and
    return a scalar Tensor. Relative error per entry is
    |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
    """
    if grads is None:
        with Tape() as tape:
            loss = loss_fn()
        grads = tape.backward(loss).for_params(pset)
    worst = 0.0
    for name, g in grads.items():
        param = pset[name]
        flat = param.data.reshape(-1)
        gflat = np.asarray(g).reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = loss_fn().item()
            flat[i] = orig - eps
            down = loss_fn().item()
            flat[i] = orig
            numeric = (up - down) / (2.0 * eps)
            analytic = gflat[i]
            denom = max(abs(analytic), abs(numeric), 1e-8)
            worst = max(worst, abs(analytic - numeric) / denom)
    return worst
