"""Soft actor-critic with sigmoid-squashed actions and latent-aware replay.

The agent sees an RL state s = [o; xbar; c]: raw observation, latent mean
from the filter (zeros in vanilla mode, so both modes share one architecture
and the comparison isolates information content rather than capacity), and
the control target. Raw experience is kept in a trajectory buffer WITHOUT
latents; the replay buffer is a derived artifact that is rebuilt from the
trajectory buffer whenever the filter changes, so stale latents never linger.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionError, InputError, TrainingError
from .gssm import filter_trajectory_batch
from .nn import tensor as T
from .nn.layers import MLPSpec, init_mlp, mlp_forward
from .nn.optim import AdamState, adam_step
from .nn.params import ParameterSet
from .nn.tensor import Tape, Tensor, backward

log = logging.getLogger(__name__)

LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class SACConfig:
    obs_dim: int = 4
    latent_dim: int = 8
    target_dim: int = 2
    action_dim: int = 4
    hidden: int = 256
    gamma: float = 0.99
    lr: float = 3e-4
    tau_soft: float = 0.005
    batch_size: int = 256
    target_entropy: float = -4.0
    log_std_min: float = -20.0
    log_std_max: float = 2.0
    replay_capacity: int = 100_000
    traj_capacity: int = 500

    def __post_init__(self):
        if not 0.0 <= self.gamma < 1.0:
            raise ConfigError(f"gamma must be in [0,1), got {self.gamma}")
        if not 0.0 < self.tau_soft <= 1.0:
            raise ConfigError(f"tau_soft must be in (0,1], got {self.tau_soft}")
        if min(self.obs_dim, self.action_dim, self.hidden,
               self.batch_size) < 1 or self.latent_dim < 0:
            raise ConfigError("dimensions must be positive")
        if self.log_std_min >= self.log_std_max:
            raise ConfigError("log_std bounds out of order")

    @property
    def state_dim(self) -> int:
        return self.obs_dim + self.latent_dim + self.target_dim


def actor_spec(cfg: SACConfig) -> MLPSpec:
    return MLPSpec([cfg.state_dim, cfg.hidden, cfg.hidden, 2 * cfg.action_dim],
                   hidden_act="relu")


def critic_spec(cfg: SACConfig) -> MLPSpec:
    return MLPSpec([cfg.state_dim + cfg.action_dim, cfg.hidden, cfg.hidden, 1],
                   hidden_act="relu")


def _copy_module(pset: ParameterSet, src: str, dst: str, spec: MLPSpec) -> None:
    for i in range(spec.n_layers):
        for kind in ("W", "b"):
            pset[f"{dst}.{kind}{i}"].data = pset[f"{src}.{kind}{i}"].data.copy()


def init_agent(pset: ParameterSet, cfg: SACConfig, rng: np.random.Generator,
               prefix: str = "agent") -> None:
    """Actor, two critics, frozen target copies, and the temperature."""
    init_mlp(pset, f"{prefix}.actor", actor_spec(cfg), rng)
    init_mlp(pset, f"{prefix}.critic1", critic_spec(cfg), rng)
    init_mlp(pset, f"{prefix}.critic2", critic_spec(cfg), rng)
    init_mlp(pset, f"{prefix}.target1", critic_spec(cfg), rng, trainable=False)
    init_mlp(pset, f"{prefix}.target2", critic_spec(cfg), rng, trainable=False)
    _copy_module(pset, f"{prefix}.critic1", f"{prefix}.target1", critic_spec(cfg))
    _copy_module(pset, f"{prefix}.critic2", f"{prefix}.target2", critic_spec(cfg))
    pset.add(f"{prefix}.alpha.log", np.zeros((1, 1)))


def alpha_value(pset: ParameterSet, prefix: str = "agent") -> float:
    return float(np.exp(pset[f"{prefix}.alpha.log"].data[0, 0]))


def actor_forward(pset: ParameterSet, cfg: SACConfig, s: Tensor,
                  prefix: str = "agent"):
    out = mlp_forward(pset, f"{prefix}.actor", actor_spec(cfg), s)
    mu = T.slice_cols(out, 0, cfg.action_dim)
    log_std = T.clamp(T.slice_cols(out, cfg.action_dim, 2 * cfg.action_dim),
                      cfg.log_std_min, cfg.log_std_max)
    return mu, log_std


def actor_sample(pset: ParameterSet, cfg: SACConfig, s: Tensor,
                 rng: np.random.Generator = None, noise: np.ndarray = None,
                 prefix: str = "agent"):
    """Reparameterized draw a = sigmoid(mu + std*eta) with squash-corrected
    density: log pi(a) = sum_d [ log N(u_d) - log(a_d (1 - a_d)) ], where the
    sigmoid output is clamped to [1e-6, 1-1e-6] before the correction log.
    """
    mu, log_std = actor_forward(pset, cfg, s, prefix)
    if noise is None:
        if rng is None:
            raise InputError("actor_sample needs either rng or noise")
        noise = rng.standard_normal(mu.data.shape)
    eta = Tensor(np.asarray(noise, dtype=float))
    u = T.add(mu, T.mul(T.exp(log_std), eta))
    a = T.sigmoid(u)
    a_c = T.clamp(a, 1e-6, 1.0 - 1e-6)
    one_minus = T.sub(Tensor(np.ones_like(a.data)), a_c)
    # log N(u; mu, std) reduces to -log_std - eta^2/2 - log(2*pi)/2 under the
    # reparameterization, which keeps the gradient path through mu and std
    gauss = T.sub(T.mul(log_std, Tensor(-np.ones_like(log_std.data))),
                  Tensor(0.5 * noise * noise + 0.5 * LOG_2PI))
    corr = T.add(T.log(a_c), T.log(one_minus))
    # row-sum via ones-column matmul keeps logp as a [batch, 1] column
    logp = T.matmul(T.sub(gauss, corr), Tensor(np.ones((cfg.action_dim, 1))))
    return a, logp


def actor_mean_action(pset: ParameterSet, cfg: SACConfig, s: Tensor,
                      prefix: str = "agent") -> np.ndarray:
    """Deterministic evaluation action: squashed pre-noise mean."""
    mu, _ = actor_forward(pset, cfg, s, prefix)
    return 1.0 / (1.0 + np.exp(-mu.data))


def q_forward(pset: ParameterSet, cfg: SACConfig, which: str, s: Tensor,
              a: Tensor, prefix: str = "agent") -> Tensor:
    return mlp_forward(pset, f"{prefix}.{which}", critic_spec(cfg),
                       T.concat([s, a], axis=1))


def _module_grads(grads: dict, keys) -> dict:
    return {k: v for k, v in grads.items() if any(key in k for key in keys)}


def critic_update(pset: ParameterSet, cfg: SACConfig, batch: dict,
                  adam: AdamState, rng: np.random.Generator,
                  prefix: str = "agent") -> dict:
    """Clipped double-Q regression toward the soft Bellman target."""
    s2 = Tensor(batch["next_state"])
    a2, logp2 = actor_sample(pset, cfg, s2, rng=rng, prefix=prefix)
    q1t = q_forward(pset, cfg, "target1", s2, a2, prefix).data
    q2t = q_forward(pset, cfg, "target2", s2, a2, prefix).data
    alpha = alpha_value(pset, prefix)
    soft_v = np.minimum(q1t, q2t) - alpha * logp2.data
    y = (batch["reward"][:, None]
         + cfg.gamma * (1.0 - batch["done"][:, None]) * soft_v)
    s = Tensor(batch["state"])
    a = Tensor(batch["action"])
    with Tape() as tape:
        q1 = q_forward(pset, cfg, "critic1", s, a, prefix)
        q2 = q_forward(pset, cfg, "critic2", s, a, prefix)
        l1 = T.tmean(T.square(T.sub(q1, Tensor(y))))
        l2 = T.tmean(T.square(T.sub(q2, Tensor(y))))
        loss = T.add(l1, l2)
        grads = backward(tape, loss, pset)
    if not np.isfinite(loss.data):
        raise TrainingError(f"non-finite critic loss {loss.data}")
    adam_step(pset, _module_grads(grads, (f"{prefix}.critic",)), adam)
    return {"critic1": float(l1.data), "critic2": float(l2.data),
            "target_mean": float(np.mean(y))}


def actor_update(pset: ParameterSet, cfg: SACConfig, states: np.ndarray,
                 adam: AdamState, rng: np.random.Generator,
                 prefix: str = "agent") -> dict:
    """One step on the actor only: maximize min-Q + entropy bonus."""
    alpha = alpha_value(pset, prefix)
    s = Tensor(states)
    with Tape() as tape:
        a, logp = actor_sample(pset, cfg, s, rng=rng, prefix=prefix)
        q1 = q_forward(pset, cfg, "critic1", s, a, prefix)
        q2 = q_forward(pset, cfg, "critic2", s, a, prefix)
        qmin = T.minimum(q1, q2)
        loss = T.tmean(T.sub(T.mul(logp, Tensor(np.full_like(logp.data, alpha))),
                             qmin))
        grads = backward(tape, loss, pset)
    if not np.isfinite(loss.data):
        raise TrainingError(f"non-finite actor loss {loss.data}")
    adam_step(pset, _module_grads(grads, (f"{prefix}.actor",)), adam)
    return {"actor": float(loss.data), "mean_logp": float(np.mean(logp.data))}


def alpha_update(pset: ParameterSet, cfg: SACConfig, mean_logp: float,
                 adam: AdamState, prefix: str = "agent") -> dict:
    """Temperature step toward the target entropy (parameterized by log)."""
    coeff = -(mean_logp + cfg.target_entropy)
    with Tape() as tape:
        loss = T.mul(T.exp(pset[f"{prefix}.alpha.log"]),
                     Tensor(np.array([[coeff]])))
        grads = backward(tape, loss, pset)
    adam_step(pset, _module_grads(grads, (f"{prefix}.alpha",)), adam)
    return {"alpha": alpha_value(pset, prefix)}


def target_soft_update(pset: ParameterSet, cfg: SACConfig,
                       prefix: str = "agent") -> None:
    """target <- tau*online + (1-tau)*target, elementwise."""
    tau = cfg.tau_soft
    spec = critic_spec(cfg)
    for j in (1, 2):
        for i in range(spec.n_layers):
            for kind in ("W", "b"):
                t = pset[f"{prefix}.target{j}.{kind}{i}"]
                o = pset[f"{prefix}.critic{j}.{kind}{i}"]
                t.data = tau * o.data + (1.0 - tau) * t.data


# ------------------------------------------------------------------ buffers


@dataclass
class ExperienceTuple:
    """Raw interaction record: latents are never stored here."""

    oc: np.ndarray        # [obs; target]
    action: np.ndarray
    reward: float
    oc_next: np.ndarray
    done: bool


class TrajectoryBuffer:
    """FIFO ring of complete episodes (lists of ExperienceTuple)."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ConfigError(f"capacity must be positive, got {capacity}")
        self.capacity = capacity
        self._episodes = []

    def add_episode(self, episode) -> None:
        episode = list(episode)
        if not episode:
            raise InputError("cannot store an empty episode")
        self._episodes.append(episode)
        if len(self._episodes) > self.capacity:
            self._episodes.pop(0)

    @property
    def episodes(self) -> list:
        return self._episodes

    def n_tuples(self) -> int:
        return sum(len(ep) for ep in self._episodes)

    def __len__(self) -> int:
        return len(self._episodes)


class ReplayBuffer:
    """Flat ring of latent-augmented tuples, rebuilt after filter updates."""

    def __init__(self, capacity: int, state_dim: int, action_dim: int):
        if capacity < 1:
            raise ConfigError(f"capacity must be positive, got {capacity}")
        self.capacity = capacity
        self.state = np.zeros((capacity, state_dim))
        self.action = np.zeros((capacity, action_dim))
        self.reward = np.zeros(capacity)
        self.next_state = np.zeros((capacity, state_dim))
        self.done = np.zeros(capacity)
        self._size = 0
        self._pos = 0

    def add_batch(self, s, a, r, s2, done) -> None:
        s = np.atleast_2d(s)
        for i in range(s.shape[0]):
            self.state[self._pos] = s[i]
            self.action[self._pos] = a[i]
            self.reward[self._pos] = r[i]
            self.next_state[self._pos] = s2[i]
            self.done[self._pos] = done[i]
            self._pos = (self._pos + 1) % self.capacity
            self._size = min(self._size + 1, self.capacity)

    def sample(self, n: int, rng: np.random.Generator) -> dict:
        if self._size == 0:
            raise InputError("cannot sample from an empty replay buffer")
        idx = rng.integers(0, self._size, size=n)
        return {
            "state": self.state[idx],
            "action": self.action[idx],
            "reward": self.reward[idx],
            "next_state": self.next_state[idx],
            "done": self.done[idx],
        }

    def __len__(self) -> int:
        return self._size


# ------------------------------------------------------- RL-state assembly


def build_rl_state(o: np.ndarray, xbar, c: np.ndarray,
                   cfg: SACConfig) -> np.ndarray:
    """[o; xbar; c]; a None latent (vanilla mode) becomes a zero slot."""
    o = np.asarray(o, dtype=float)
    c = np.asarray(c, dtype=float)
    if xbar is None:
        xbar = np.zeros(cfg.latent_dim)
    xbar = np.asarray(xbar, dtype=float)
    if o.shape != (cfg.obs_dim,) or c.shape != (cfg.target_dim,) \
            or xbar.shape != (cfg.latent_dim,):
        raise DimensionError(
            f"rl-state parts o{o.shape} x{xbar.shape} c{c.shape} do not match "
            f"widths ({cfg.obs_dim}, {cfg.latent_dim}, {cfg.target_dim})")
    s = np.concatenate([o, xbar, c])
    if not np.all(np.isfinite(s)):
        raise InputError("non-finite entries in RL state")
    return s


def episode_arrays(episode, cfg: SACConfig):
    """Stacked (obs_seq [n+1, obs], action_seq [n+1, act]) for the filter.

    The action row at index t is the action taken at step t; the trailing
    pad row is never consumed because the filter reads the previous action.
    """
    obs = np.array([step.oc[:cfg.obs_dim] for step in episode]
                   + [episode[-1].oc_next[:cfg.obs_dim]])
    acts = np.concatenate([np.array([step.action for step in episode]),
                           np.zeros((1, cfg.action_dim))], axis=0)
    return obs, acts


def relabel_experience(traj: TrajectoryBuffer, cfg: SACConfig, filt=None,
                       dec=None) -> ReplayBuffer:
    """Rebuild the replay buffer from raw episodes.

    With a filter, every episode is re-encoded (mean propagation, grouped by
    length so equal-length episodes share one batched sweep) and s_t carries
    the NEW latent means; without one (vanilla mode) the latent slot is
    zeros. Episodes shorter than 2 steps are skipped with a warning.
    """
    replay = ReplayBuffer(cfg.replay_capacity, cfg.state_dim, cfg.action_dim)
    kept = []
    for episode in traj.episodes:
        if len(episode) < 2:
            log.warning("skipping %d-step episode during relabeling",
                        len(episode))
            continue
        kept.append(episode)
    lats = [None] * len(kept)
    if filt is not None:
        by_len = {}
        for i, episode in enumerate(kept):
            by_len.setdefault(len(episode), []).append(i)
        for idxs in by_len.values():
            stacked = [episode_arrays(kept[i], cfg) for i in idxs]
            obs = np.stack([o for o, _ in stacked])
            acts = np.stack([a for _, a in stacked])
            out = filter_trajectory_batch(filt, dec, obs, acts)
            for j, i in enumerate(idxs):
                lats[i] = out["mean"][j]
    for i, episode in enumerate(kept):
        n = len(episode)
        lat = lats[i] if lats[i] is not None else np.zeros((n + 1, cfg.latent_dim))
        oc = np.array([step.oc for step in episode])
        oc_next = np.array([step.oc_next for step in episode])
        s = np.concatenate([oc[:, :cfg.obs_dim], lat[:-1],
                            oc[:, cfg.obs_dim:]], axis=1)
        s2 = np.concatenate([oc_next[:, :cfg.obs_dim], lat[1:],
                             oc_next[:, cfg.obs_dim:]], axis=1)
        if not (np.all(np.isfinite(s)) and np.all(np.isfinite(s2))):
            raise TrainingError("non-finite RL state during relabeling")
        a = np.array([step.action for step in episode])
        r = np.array([step.reward for step in episode])
        done = np.array([float(step.done) for step in episode])
        replay.add_batch(s, a, r, s2, done)
    return replay
