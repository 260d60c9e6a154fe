"""Recurrent Gaussian state-space model.

A GRU-based filter turns an observation/action history into a diagonal
Gaussian over a latent state at every step. A decoder maps latents back to
Gaussians over observations. Training minimizes reconstruction negative
log-likelihood plus a KL term tying consecutive filter outputs to a learned
transition model, backpropagated through the unrolled recurrence.

Filter recursion per step:
    h_t  = GRU(h_{t-1}, o_t)
    h_x  = W_s([x_{t-1}; a_{t-1}])
    h_c  = 0.5 * tanh(h_x + h_t)          (entries confined to (-0.5, 0.5))
    q_t  = W_x(h_c)                        (diagonal Gaussian over the latent)
    x_t  = mean + sqrt(var) * eta          (reparameterized; eta optional)

With no noise supplied the filter propagates means, which is the
deterministic mode used everywhere outside model training.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, DimensionError, InputError, TrainingError
from .nn import AdamState, MLPSpec, ParameterSet, Tape, adam_step, clip_global_norm
from .nn import init_gru, init_mlp, gru_step, mlp_forward
from .nn import tensor as T
from .nn.tensor import Tensor

LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class DiagGaussian:
    """Diagonal Gaussian: mean and variance vectors of equal width.

    Rows are batch entries when 2-D. Variances must be positive; producers
    clamp to their configured floor before constructing one.
    """

    mean: Tensor
    var: Tensor

    def __post_init__(self):
        if not isinstance(self.mean, Tensor):
            self.mean = Tensor(self.mean)
        if not isinstance(self.var, Tensor):
            self.var = Tensor(self.var)
        if self.mean.data.shape != self.var.data.shape:
            raise DimensionError(
                f"mean/var shape mismatch: {self.mean.data.shape} vs {self.var.data.shape}"
            )
        if np.min(self.var.data) <= 0.0:
            raise ContractError("non-positive variance in DiagGaussian")

    @property
    def width(self) -> int:
        return int(self.mean.data.shape[-1])


def gaussian_head(stats: Tensor, dim: int, floor: float) -> DiagGaussian:
    """Split a [batch, 2*dim] head into mean and floored softplus variance."""
    mean = T.slice_cols(stats, 0, dim)
    var = T.clamp_min(T.softplus(T.slice_cols(stats, dim, 2 * dim)), floor)
    return DiagGaussian(mean, var)


@dataclass
class GSSMConfig:
    obs_dim: int = 4
    action_dim: int = 4
    latent_dim: int = 8
    hidden: int = 64
    ws_hidden: int = 32
    head_hidden: int = 64
    var_floor: float = 1e-6


class Filter:
    """The recurrent filter: GRU over observations plus the W_s/W_x heads."""

    def __init__(self, pset: ParameterSet, cfg: GSSMConfig,
                 rng: np.random.Generator, prefix: str = "filter"):
        self.pset = pset
        self.cfg = cfg
        self.prefix = prefix
        init_gru(pset, f"{prefix}.gru", cfg.obs_dim, cfg.hidden, rng)
        self.ws_spec = MLPSpec(
            sizes=[cfg.latent_dim + cfg.action_dim, cfg.ws_hidden, cfg.hidden],
            hidden_act="tanh", out_act="identity",
        )
        init_mlp(pset, f"{prefix}.ws", self.ws_spec, rng)
        self.wx_spec = MLPSpec(
            sizes=[cfg.hidden, cfg.head_hidden, 2 * cfg.latent_dim],
            hidden_act="tanh", out_act="identity",
        )
        init_mlp(pset, f"{prefix}.wx", self.wx_spec, rng)

    def init_state(self, batch: int):
        """Zero hidden state, zero latent, zero previous action."""
        cfg = self.cfg
        return (
            Tensor(np.zeros((batch, cfg.hidden))),
            Tensor(np.zeros((batch, cfg.latent_dim))),
            Tensor(np.zeros((batch, cfg.action_dim))),
        )

    def step(self, h_prev: Tensor, x_prev: Tensor, a_prev: Tensor,
             o_t: Tensor, noise=None):
        """One filter update. Returns (h_t, q_t, x_t).

        `noise` is a standard-normal array for reparameterized sampling;
        None propagates the mean.
        """
        if not np.all(np.isfinite(o_t.data)):
            raise InputError("non-finite observation passed to filter step")
        cfg = self.cfg
        h_t = gru_step(self.pset, f"{self.prefix}.gru", o_t, h_prev)
        h_x = mlp_forward(self.pset, f"{self.prefix}.ws", self.ws_spec,
                          T.concat([x_prev, a_prev], axis=1))
        h_c = T.tanh(h_x + h_t) * 0.5
        stats = mlp_forward(self.pset, f"{self.prefix}.wx", self.wx_spec, h_c)
        q_t = gaussian_head(stats, cfg.latent_dim, cfg.var_floor)
        if noise is None:
            x_t = q_t.mean
        else:
            x_t = q_t.mean + T.sqrt(q_t.var) * Tensor(noise)
        return h_t, q_t, x_t


class Decoder:
    """Latent-to-observation head W_g emitting a diagonal Gaussian."""

    def __init__(self, pset: ParameterSet, cfg: GSSMConfig,
                 rng: np.random.Generator, prefix: str = "decoder"):
        self.pset = pset
        self.cfg = cfg
        self.prefix = prefix
        self.spec = MLPSpec(
            sizes=[cfg.latent_dim, cfg.head_hidden, 2 * cfg.obs_dim],
            hidden_act="tanh", out_act="identity",
        )
        init_mlp(pset, prefix, self.spec, rng)

    def decode(self, x: Tensor) -> DiagGaussian:
        stats = mlp_forward(self.pset, self.prefix, self.spec, x)
        return gaussian_head(stats, self.cfg.obs_dim, self.cfg.var_floor)


@dataclass
class LatentTrajectory:
    """Per-step filter records for one episode (deterministic numpy views)."""

    obs: np.ndarray          # [T, obs_dim]
    actions: np.ndarray      # [T, action_dim]
    hidden: np.ndarray       # [T, hidden]
    mean: np.ndarray         # [T, latent_dim] filter means
    var: np.ndarray          # [T, latent_dim]
    latent: np.ndarray       # [T, latent_dim] sampled (or mean) latents
    recon_mean: np.ndarray   # [T, obs_dim]
    recon_var: np.ndarray    # [T, obs_dim]

    def __len__(self) -> int:
        return self.obs.shape[0]


def likelihood_loss(k_dists, observations) -> Tensor:
    """Negative log-likelihood of observations under per-step decoder Gaussians.

    Summed over time, dimensions, and batch rows; callers normalize by batch
    size when averaging. Variances must already sit at or above their floor.
    """
    if len(k_dists) != len(observations):
        raise ContractError(
            f"{len(k_dists)} distributions vs {len(observations)} observations"
        )
    total = None
    for k, o in zip(k_dists, observations):
        if np.min(k.var.data) < 1e-6 * (1.0 - 1e-9):
            raise ContractError("decoder variance below floor in likelihood_loss")
        o_t = o if isinstance(o, Tensor) else Tensor(o)
        resid = o_t - k.mean
        nll = T.tsum((T.log(k.var) + T.square(resid) / k.var + LOG_2PI) * 0.5)
        total = nll if total is None else total + nll
    return total


def kl_diag_gaussians(p: DiagGaussian, q: DiagGaussian) -> Tensor:
    """KL[p || q] for diagonal Gaussians, summed over dims and batch rows."""
    if p.mean.data.shape != q.mean.data.shape:
        raise DimensionError(
            f"KL shape mismatch: {p.mean.data.shape} vs {q.mean.data.shape}"
        )
    log_ratio = T.log(q.var) - T.log(p.var)
    quad = (p.var + T.square(p.mean - q.mean)) / q.var
    return T.tsum(log_ratio + quad - 1.0) * 0.5


def kl_loss(filter_dists, transition_dists) -> Tensor:
    """Sum over steps of KL[filter q_t || transition prediction]."""
    if len(filter_dists) != len(transition_dists):
        raise ContractError(
            f"{len(filter_dists)} filter dists vs {len(transition_dists)} transition dists"
        )
    total = None
    for q, p in zip(filter_dists, transition_dists):
        term = kl_diag_gaussians(q, p)
        total = term if total is None else total + term
    if total is None:
        return Tensor(0.0)
    return total


def filter_trajectory_batch(filt: Filter, decoder: Decoder, obs: np.ndarray,
                            actions: np.ndarray, noise_rng=None):
    """Run the filter over a batch of equal-length trajectories.

    obs: [B, T, obs_dim]; actions: [B, T, action_dim] where actions[:, t] is
    the action taken at step t (the filter consumes the previous one, with a
    zero initial action). Returns stacked arrays keyed like LatentTrajectory,
    each of shape [B, T, ...]. Mean propagation unless noise_rng is given.
    """
    if obs.ndim != 3:
        raise DimensionError(f"expected [B, T, obs] array, got {obs.shape}")
    b, n_steps = obs.shape[0], obs.shape[1]
    cfg = filt.cfg
    h, x, a_prev = filt.init_state(b)
    out = {k: [] for k in ("hidden", "mean", "var", "latent", "recon_mean", "recon_var")}
    for t in range(n_steps):
        noise = None
        if noise_rng is not None:
            noise = noise_rng.standard_normal((b, cfg.latent_dim))
        h, q, x = filt.step(h, x, a_prev, Tensor(obs[:, t, :]), noise)
        k = decoder.decode(x)
        out["hidden"].append(h.data)
        out["mean"].append(q.mean.data)
        out["var"].append(q.var.data)
        out["latent"].append(x.data)
        out["recon_mean"].append(k.mean.data)
        out["recon_var"].append(k.var.data)
        a_prev = Tensor(actions[:, t, :])
    return {k: np.stack(v, axis=1) for k, v in out.items()}


def filter_trajectory(filt: Filter, decoder: Decoder, obs: np.ndarray,
                      actions: np.ndarray, noise_rng=None) -> LatentTrajectory:
    """Single-trajectory wrapper over filter_trajectory_batch."""
    obs = np.asarray(obs, dtype=np.float64)
    actions = np.asarray(actions, dtype=np.float64)
    if obs.ndim != 2 or len(obs) == 0:
        raise ContractError(f"expected nonempty [T, obs] trajectory, got {obs.shape}")
    res = filter_trajectory_batch(filt, decoder, obs[None], actions[None], noise_rng)
    return LatentTrajectory(
        obs=obs, actions=actions,
        hidden=res["hidden"][0], mean=res["mean"][0], var=res["var"][0],
        latent=res["latent"][0],
        recon_mean=res["recon_mean"][0], recon_var=res["recon_var"][0],
    )


@dataclass
class GSSMTrainConfig:
    steps: int = 500
    batch_size: int = 8
    bptt_len: int = 50
    lr: float = 1e-3
    kl_weight: float = 1.0
    warmup_frac: float = 0.2
    clip_norm: float = 10.0
    reg_weight: float = 1.0
    # post-training ensemble refit (0 disables); ignored by transitions
    # without a refit() method
    refit_steps: int = 0
    refit_lr: float = 1e-3
    refit_batch: int = 256
    refit_passes: int = 2


def _unroll_loss(filt, decoder, transition, obs, act, rng, lam):
    """NLL + lam * KL for one stacked window batch.

    Returns (loss tensor, nll float, kl float, latent step pairs) where the
    pairs are detached [N, latent] arrays of consecutive sampled latents.
    """
    b, n_steps = obs.shape[0], obs.shape[1]
    cfg = filt.cfg
    h, x, a_prev = filt.init_state(b)
    nll_total = None
    kl_total = None
    x_seq = []
    for t in range(n_steps):
        noise = rng.standard_normal((b, cfg.latent_dim))
        x_prev = x
        h, q, x = filt.step(h, x, a_prev, Tensor(obs[:, t, :]), noise)
        x_seq.append(x.data)
        k = decoder.decode(x)
        o_t = Tensor(obs[:, t, :])
        resid = o_t - k.mean
        nll = T.tsum((T.log(k.var) + T.square(resid) / k.var + LOG_2PI) * 0.5)
        nll_total = nll if nll_total is None else nll_total + nll
        if t >= 1 and lam > 0.0:
            p = transition.predict(x_prev)
            term = kl_diag_gaussians(q, p)
            kl_total = term if kl_total is None else kl_total + term
        a_prev = Tensor(act[:, t, :])
    if kl_total is None:
        kl_total = Tensor(0.0)
    loss = (nll_total + kl_total * lam) * (1.0 / b)
    x_prev_arr = np.concatenate(x_seq[:-1]) if n_steps > 1 else np.zeros((0, cfg.latent_dim))
    x_next_arr = np.concatenate(x_seq[1:]) if n_steps > 1 else np.zeros((0, cfg.latent_dim))
    return loss, nll_total.data.item() / b, kl_total.data.item() / b, (x_prev_arr, x_next_arr)


def _sample_windows(trajectories, batch_size, bptt_len, rng):
    """Draw window slices and group them by length for stacking."""
    groups: dict = {}
    idx = rng.integers(0, len(trajectories), size=batch_size)
    for i in idx:
        obs, act = trajectories[i]
        n = len(obs)
        if n > bptt_len:
            start = int(rng.integers(0, n - bptt_len + 1))
            window = (obs[start:start + bptt_len], act[start:start + bptt_len])
            n = bptt_len
        else:
            window = (obs, act)
        groups.setdefault(n, []).append(window)
    return groups


def train_gssm(filt: Filter, decoder: Decoder, transition, trajectories,
               hyper: GSSMTrainConfig, rng: np.random.Generator,
               adam: AdamState = None) -> list:
    """Train filter, decoder, and transition jointly on stored trajectories.

    `trajectories` is a list of (obs [T, obs_dim], actions [T, action_dim])
    pairs; lengths may differ. Each step samples `batch_size` windows of at
    most `bptt_len` steps, unrolls the filter with reparameterized sampling,
    and takes one Adam step on mean-over-batch (NLL + lambda * KL), with the
    KL weight warmed up linearly over the first `warmup_frac` of steps.
    Ensemble transitions additionally receive a bootstrap regression loss on
    the sampled latent pairs. Returns the per-step loss history.
    """
    if not trajectories:
        raise ContractError("train_gssm requires a nonempty trajectory list")
    pset = filt.pset
    if adam is None:
        adam = AdamState(lr=hyper.lr)
    warm_steps = max(1, int(hyper.warmup_frac * hyper.steps))
    history = []
    for step in range(hyper.steps):
        lam = hyper.kl_weight * min(1.0, step / warm_steps)
        groups = _sample_windows(trajectories, hyper.batch_size, hyper.bptt_len, rng)
        nll_log = kl_log = reg_log = 0.0
        pair_prev, pair_next = [], []
        with Tape() as tape:
            loss = None
            for windows in groups.values():
                obs = np.stack([w[0] for w in windows])
                act = np.stack([w[1] for w in windows])
                g_loss, g_nll, g_kl, pairs = _unroll_loss(
                    filt, decoder, transition, obs, act, rng, lam)
                weight = len(windows) / hyper.batch_size
                loss = g_loss * weight if loss is None else loss + g_loss * weight
                nll_log += g_nll * weight
                kl_log += g_kl * weight
                pair_prev.append(pairs[0])
                pair_next.append(pairs[1])
            if hasattr(transition, "regression_loss"):
                xp = np.concatenate(pair_prev)
                xn = np.concatenate(pair_next)
                if len(xp) > 0:
                    reg = transition.regression_loss(xp, xn, rng)
                    reg_log = reg.data.item()
                    loss = loss + Tensor(np.array([[hyper.reg_weight]])) * reg
        total_val = loss.data.item()
        if not np.isfinite(total_val):
            raise TrainingError(
                f"non-finite GSSM loss at step {step}: "
                f"nll={nll_log:.6g} kl={kl_log:.6g} lambda={lam:.4f}"
            )
        grads = tape.backward(loss).for_params(pset)
        grad_norm = clip_global_norm(grads, hyper.clip_norm)
        adam_step(pset, grads, adam)
        history.append({
            "step": step, "total": total_val, "nll": nll_log, "kl": kl_log,
            "reg": reg_log, "lambda": lam, "grad_norm": grad_norm,
        })
    if hyper.refit_steps > 0 and hasattr(transition, "refit"):
        xp, xn = collect_latent_pairs(filt, decoder, trajectories, rng,
                                      n_passes=hyper.refit_passes)
        transition.refit(xp, xn, rng, steps=hyper.refit_steps,
                         lr=hyper.refit_lr, batch_size=hyper.refit_batch)
    return history


def collect_latent_pairs(filt: Filter, decoder: Decoder, trajectories,
                         rng: np.random.Generator, n_passes: int = 1):
    """Sampled consecutive-latent pairs from filter sweeps of whole
    trajectories; several passes draw fresh reparameterization noise."""
    xp, xn = [], []
    for _ in range(max(1, n_passes)):
        for obs, act in trajectories:
            lt = filter_trajectory(filt, decoder, obs, act, noise_rng=rng)
            if len(lt.latent) < 2:
                continue
            xp.append(lt.latent[:-1])
            xn.append(lt.latent[1:])
    if not xp:
        raise ContractError("no trajectory long enough to form latent pairs")
    return np.concatenate(xp), np.concatenate(xn)


def eval_gssm_loss(filt: Filter, decoder: Decoder, transition, trajectories,
                   kl_weight: float = 1.0) -> dict:
    """Deterministic (mean-propagation) loss over full trajectories.

    Returns per-trajectory averages of NLL, KL, and the combined loss; a
    diagnostic, not a training objective.
    """
    nll_total = kl_total = 0.0
    for obs, act in trajectories:
        _, nll, kl, _ = _unroll_loss(
            filt, decoder, transition, obs[None], act[None],
            _ZeroNoise(), 1.0 if kl_weight == 0.0 else kl_weight)
        nll_total += nll
        kl_total += kl
    n = len(trajectories)
    nll_total /= n
    kl_total /= n
    return {"nll": nll_total, "kl": kl_total,
            "total": nll_total + kl_weight * kl_total}


class _ZeroNoise:
    """Stands in for a Generator when mean propagation is wanted."""

    def standard_normal(self, shape):
        return np.zeros(shape)
