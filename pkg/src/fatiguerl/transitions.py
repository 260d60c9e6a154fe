"""Latent transition models.

Two interchangeable variants sit behind the same predict(x) -> DiagGaussian
interface. The gated transition blends a linear map with an MLP proposal and
carries its own variance head; it trains purely through the KL term of the
state-space objective. The ensemble variant sums each trainable member with a
frozen randomly initialized prior network and reports the moment-matched
Gaussian of the member outputs, so predictive variance comes from member
disagreement rather than a learned head; members are fit by bootstrap
regression on latent step pairs.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionError
from .gssm import DiagGaussian
from .nn import AdamState, MLPSpec, ParameterSet, Tape, adam_step
from .nn import init_mlp, mlp_forward
from .nn import tensor as T
from .nn.tensor import Tensor


class GatedTransition:
    """mean = (1 - g(x)) * L(x) + g(x) * m(x); variance from a softplus head."""

    def __init__(self, pset: ParameterSet, latent_dim: int,
                 rng: np.random.Generator, prefix: str = "trans",
                 hidden: int = 64, var_floor: float = 1e-6):
        self.pset = pset
        self.prefix = prefix
        self.latent_dim = latent_dim
        self.var_floor = var_floor
        d = latent_dim
        self.gate_spec = MLPSpec(sizes=[d, hidden, d], hidden_act="relu",
                                 out_act="sigmoid")
        self.prop_spec = MLPSpec(sizes=[d, hidden, d], hidden_act="relu",
                                 out_act="identity")
        self.lin_spec = MLPSpec(sizes=[d, d], out_act="identity")
        self.var_spec = MLPSpec(sizes=[d, hidden, d], hidden_act="relu",
                                out_act="identity")
        init_mlp(pset, f"{prefix}.gate", self.gate_spec, rng)
        init_mlp(pset, f"{prefix}.prop", self.prop_spec, rng)
        init_mlp(pset, f"{prefix}.lin", self.lin_spec, rng)
        init_mlp(pset, f"{prefix}.var", self.var_spec, rng)

    def predict(self, x: Tensor) -> DiagGaussian:
        if x.data.shape[-1] != self.latent_dim:
            raise DimensionError(
                f"{self.prefix}: expected latent width {self.latent_dim}, "
                f"got {x.data.shape}"
            )
        g = mlp_forward(self.pset, f"{self.prefix}.gate", self.gate_spec, x)
        prop = mlp_forward(self.pset, f"{self.prefix}.prop", self.prop_spec, x)
        lin = mlp_forward(self.pset, f"{self.prefix}.lin", self.lin_spec, x)
        mean = (1.0 - g) * lin + g * prop
        raw = mlp_forward(self.pset, f"{self.prefix}.var", self.var_spec, x)
        var = T.clamp_min(T.softplus(raw), self.var_floor)
        return DiagGaussian(mean, var)


class EnsembleTransition:
    """K trainable nets, each offset by a frozen scaled prior network.

    predict() fits a diagonal Gaussian to the member outputs: elementwise
    average for the mean, unbiased sample variance for the variance (clamped
    to the floor). Disagreement grows away from the training data because the
    frozen priors never reconcile, which is the point.
    """

    def __init__(self, pset: ParameterSet, latent_dim: int,
                 rng: np.random.Generator, prefix: str = "trans",
                 n_members: int = 10, beta: float = 1.0,
                 hidden: int = 64, var_floor: float = 1e-6,
                 bootstrap_p: float = 0.8):
        if n_members < 2:
            raise ConfigError(f"ensemble needs at least 2 members, got {n_members}")
        self.pset = pset
        self.prefix = prefix
        self.latent_dim = latent_dim
        self.n_members = n_members
        self.beta = beta
        self.var_floor = var_floor
        self.bootstrap_p = bootstrap_p
        d = latent_dim
        self.member_spec = MLPSpec(sizes=[d, hidden, d], hidden_act="tanh",
                                   out_act="identity")
        for k in range(n_members):
            init_mlp(pset, f"{prefix}.m{k}", self.member_spec, rng)
            # frozen prior, same architecture, never trained
            init_mlp(pset, f"{prefix}.prior{k}", self.member_spec, rng,
                     trainable=False)

    def member_forward(self, k: int, x: Tensor) -> Tensor:
        trained = mlp_forward(self.pset, f"{self.prefix}.m{k}",
                              self.member_spec, x)
        prior = mlp_forward(self.pset, f"{self.prefix}.prior{k}",
                            self.member_spec, x)
        return trained + prior * self.beta

    def predict(self, x: Tensor) -> DiagGaussian:
        if x.data.shape[-1] != self.latent_dim:
            raise DimensionError(
                f"{self.prefix}: expected latent width {self.latent_dim}, "
                f"got {x.data.shape}"
            )
        outs = [self.member_forward(k, x) for k in range(self.n_members)]
        total = outs[0]
        for o in outs[1:]:
            total = total + o
        mean = total * (1.0 / self.n_members)
        sq = None
        for o in outs:
            term = T.square(o - mean)
            sq = term if sq is None else sq + term
        var = T.clamp_min(sq * (1.0 / (self.n_members - 1)), self.var_floor)
        return DiagGaussian(mean, var)

    def regression_loss(self, x_prev: np.ndarray, x_next: np.ndarray,
                        rng: np.random.Generator) -> Tensor:
        """Bootstrap squared-error loss over members on detached latent pairs.

        Each member sees a Bernoulli-masked subset of the pairs; an empty
        subset is resampled. Per-member losses are masked means, summed.
        """
        n = len(x_prev)
        xp = Tensor(x_prev)
        loss = None
        for k in range(self.n_members):
            mask = (rng.random(n) < self.bootstrap_p).astype(np.float64)
            while mask.sum() == 0:
                mask = (rng.random(n) < self.bootstrap_p).astype(np.float64)
            pred = self.member_forward(k, xp)
            sq = T.tsum(T.square(pred - Tensor(x_next)), axis=1)
            term = T.tsum(sq * Tensor(mask)) * (1.0 / mask.sum())
            loss = term if loss is None else loss + term
        return loss

    def refit(self, x_prev: np.ndarray, x_next: np.ndarray,
              rng: np.random.Generator, steps: int = 500, lr: float = 1e-3,
              batch_size: int = 256) -> list:
        """Standalone bootstrap refit on a frozen pair dataset.

        Used after joint training: the latent geometry has stopped moving,
        so the members can finally cancel their priors on-data instead of
        chasing a drifting regression target.
        """
        return train_ensemble(self, x_prev, x_next, rng, steps=steps,
                              lr=lr, batch_size=batch_size)


def train_ensemble(ens: EnsembleTransition, x_prev: np.ndarray,
                   x_next: np.ndarray, rng: np.random.Generator,
                   steps: int = 500, lr: float = 1e-3,
                   batch_size: int = 64) -> list:
    """Standalone bootstrap regression on a fixed (x_prev, x_next) dataset.

    Bootstrap masks are drawn once per (sample, member) and held fixed, the
    classic bootstrapped-ensemble recipe. Returns the loss history.
    """
    n = len(x_prev)
    masks = (rng.random((n, ens.n_members)) < ens.bootstrap_p).astype(np.float64)
    for k in range(ens.n_members):
        while masks[:, k].sum() == 0:
            masks[:, k] = (rng.random(n) < ens.bootstrap_p).astype(np.float64)
    adam = AdamState(lr=lr)
    history = []
    for _ in range(steps):
        idx = rng.integers(0, n, size=min(batch_size, n))
        xb = Tensor(x_prev[idx])
        yb = x_next[idx]
        with Tape() as tape:
            loss = None
            for k in range(ens.n_members):
                mask = masks[idx, k]
                if mask.sum() == 0:
                    continue
                pred = ens.member_forward(k, xb)
                sq = T.tsum(T.square(pred - Tensor(yb)), axis=1)
                term = T.tsum(sq * Tensor(mask)) * (1.0 / mask.sum())
                loss = term if loss is None else loss + term
        grads = tape.backward(loss).for_params(ens.pset)
        adam_step(ens.pset, grads, adam)
        history.append(loss.data.item())
    return history
