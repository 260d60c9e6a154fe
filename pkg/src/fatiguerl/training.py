"""The interaction / updating loop: episodes in, metrics and checkpoints out.

One training run interleaves three clocks:
  * every control step: one stored transition, and (once enough experience
    exists) `updates_per_step` soft actor-critic updates;
  * every episode: the trajectory buffer grows by one episode and the replay
    buffer is rebuilt from it (so replay is always a pure function of the
    trajectory buffer and the current filter — checkpoint-resume friendly);
  * every `eval_cadence` episodes: in gssm mode a state-space-model training
    round on all stored trajectories, then a deterministic evaluation of the
    policy, a metrics flush, and a checkpoint.

Every random draw comes from a named substream of the run seed, so a resumed
run consumes exactly the streams the uninterrupted run would have.
"""

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .armenv import (ArmConfig, batch_env_reset, batch_env_step, env_reset,
                     env_step, mid_episode_retarget)
from .checkpoint import (Checkpoint, checkpoint_to_pset, load_checkpoint,
                         pset_to_checkpoint, save_checkpoint)
from .config import ExperimentConfig, resolved_text
from .errors import CheckpointError, SimulationError, TrainingError
from .gssm import Decoder, Filter, train_gssm
from .nn.optim import AdamState
from .nn.params import ParameterSet
from .nn.tensor import Tensor
from .reporting import code_hash, config_digest, write_csv
from .rng import substream
from .sac import (ExperienceTuple, SACConfig, TrajectoryBuffer,
                  actor_mean_action, actor_sample, alpha_update, alpha_value,
                  build_rl_state, critic_update, actor_update, episode_arrays,
                  relabel_experience, target_soft_update)
from .transitions import EnsembleTransition, GatedTransition

METRIC_FIELDS = ("episode", "rmse_deg", "mean_return", "alpha",
                 "gssm_nll", "gssm_kl", "sac_updates")


@dataclass
class RunStats:
    """Instrumentation counters; mode isolation is asserted against these."""

    episodes_run: int = 0
    sac_updates: int = 0
    gssm_updates: int = 0
    relabels: int = 0
    eval_points: int = 0


def make_transition(pset: ParameterSet, cfg: ExperimentConfig,
                    rng: np.random.Generator):
    spec = cfg.transition
    if spec.kind == "gated":
        return GatedTransition(pset, cfg.gssm.latent_dim, rng,
                               hidden=spec.hidden, var_floor=spec.var_floor)
    return EnsembleTransition(pset, cfg.gssm.latent_dim, rng,
                              n_members=spec.n_members, beta=spec.beta,
                              hidden=spec.hidden, var_floor=spec.var_floor,
                              bootstrap_p=spec.bootstrap_p)


def build_models(pset: ParameterSet, cfg: ExperimentConfig, seed: int):
    """Agent always; filter/decoder/transition only in gssm mode."""
    from .sac import init_agent
    init_agent(pset, cfg.sac, substream(seed, "init-agent"))
    if cfg.run.mode != "gssm":
        return None, None, None
    rng = substream(seed, "init-gssm")
    filt = Filter(pset, cfg.gssm, rng)
    dec = Decoder(pset, cfg.gssm, rng)
    trans = make_transition(pset, cfg, rng)
    return filt, dec, trans


class SACPolicy:
    """Batched evaluation policy: deterministic actions, online filtering."""

    def __init__(self, pset, sac_cfg: SACConfig, filt=None, dec=None,
                 prefix: str = "agent"):
        self.pset = pset
        self.cfg = sac_cfg
        self.filt = filt
        self.dec = dec
        self.prefix = prefix
        self._state = None

    def reset(self, n: int) -> None:
        if self.filt is not None:
            self._state = self.filt.init_state(n)

    def act(self, obs: np.ndarray, targets: np.ndarray) -> np.ndarray:
        n = len(obs)
        if self.filt is not None:
            h, x, a_prev = self._state
            h, q, x = self.filt.step(h, x, a_prev, Tensor(obs))
            latents = q.mean.data
        else:
            latents = np.zeros((n, self.cfg.latent_dim))
        states = np.concatenate([obs, latents, targets], axis=1)
        actions = actor_mean_action(self.pset, self.cfg, Tensor(states),
                                    self.prefix)
        if self.filt is not None:
            self._state = (h, x, Tensor(actions))
        return actions


class ScriptedPolicy:
    """Wraps a plain (obs, targets) -> excitations function."""

    def __init__(self, fn):
        self.fn = fn

    def reset(self, n: int) -> None:
        pass

    def act(self, obs: np.ndarray, targets: np.ndarray) -> np.ndarray:
        return self.fn(obs, targets)


def rmse_degrees(sq_sum: float, n_terms: int) -> float:
    """Root mean square of accumulated squared radian errors, in degrees."""
    return math.degrees(math.sqrt(sq_sum / n_terms))


def evaluate_rmse(policy, arm: ArmConfig, n_episodes: int,
                  rng: np.random.Generator, resetter=batch_env_reset,
                  stepper=batch_env_step) -> float:
    """Joint-angle RMSE (degrees) over `n_episodes` run in one batch.

    Errors are measured at every post-step pose against the current target;
    the mid-episode retarget redraws every episode's target at the same step
    it moves during training. Exploration is off by construction (the policy
    decides deterministically).
    """
    state, obs, targets = resetter(rng, arm, n_episodes)
    policy.reset(n_episodes)
    sq_sum = 0.0
    n_terms = 0
    for t in range(arm.episode_steps):
        if t == arm.retarget_step:
            targets = np.stack([
                rng.uniform(arm.shoulder_limits[0], arm.shoulder_limits[1],
                            size=n_episodes),
                rng.uniform(arm.elbow_limits[0], arm.elbow_limits[1],
                            size=n_episodes),
            ], axis=1)
        actions = policy.act(obs, targets)
        state, obs, _ = stepper(state, actions, targets, arm)
        err = obs[:, :2] - targets
        sq_sum += float(np.sum(err * err))
        n_terms += err.size
    return rmse_degrees(sq_sum, n_terms)


def _provenance(resolved: str) -> str:
    return (f"code_sha256={code_hash()} "
            f"config_sha256={config_digest(resolved)}")


def _flush_metrics(out_dir: Path, rows, provenance: str,
                   resolved: str) -> None:
    config_comment = "\n".join(f"# {line}" for line in
                               resolved.rstrip("\n").split("\n"))
    write_csv(out_dir / "metrics.csv", METRIC_FIELDS, rows,
              provenance=provenance + "\n" + config_comment)


def _make_checkpoint(cfg_sha, cfg, seed, pset, adams, traj, counters,
                     rows) -> Checkpoint:
    ckpt = Checkpoint(config_sha=cfg_sha,
                      meta={"mode": cfg.run.mode, "seed": seed},
                      counters=dict(counters),
                      metrics=[dict(r) for r in rows])
    pset_to_checkpoint(pset, ckpt)
    ckpt.adam = {label: adam.state_dict() for label, adam in adams.items()}
    ckpt.episodes = list(traj.episodes)
    return ckpt


def run_training(cfg: ExperimentConfig, seed: int, out_dir=None,
                 resume_from=None) -> dict:
    """Train one agent for `cfg.run.episodes` episodes under one seed.

    Returns {"metrics": rows, "stats": RunStats, "out_dir": Path}. On any
    training/simulation error an emergency checkpoint is written before the
    exception propagates.
    """
    run = cfg.run
    arm = cfg.arm
    sac = cfg.sac
    gssm_mode = run.mode == "gssm"
    out_dir = Path(out_dir if out_dir is not None else run.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    resolved = resolved_text(cfg)
    (out_dir / "config.resolved").write_text(resolved)
    cfg_sha = config_digest(resolved)
    provenance = _provenance(resolved)

    pset = ParameterSet()
    filt, dec, trans = build_models(pset, cfg, seed)
    adams = {
        "critic": AdamState(lr=sac.lr),
        "actor": AdamState(lr=sac.lr),
        "alpha": AdamState(lr=sac.lr),
    }
    if gssm_mode:
        adams["gssm"] = AdamState(lr=cfg.gssm_train.lr)
    traj = TrajectoryBuffer(sac.traj_capacity)
    stats = RunStats()
    counters = {"episode": 0, "sac_updates": 0, "gssm_updates": 0,
                "eval_idx": 0}
    rows = []
    returns = []

    if resume_from is not None:
        ckpt = load_checkpoint(resume_from)
        if ckpt.config_sha != cfg_sha:
            raise CheckpointError(
                f"checkpoint config {ckpt.config_sha} does not match the "
                f"requested config {cfg_sha}")
        if ckpt.meta.get("seed") != seed or ckpt.meta.get("mode") != run.mode:
            raise CheckpointError(
                f"checkpoint was taken from mode={ckpt.meta.get('mode')} "
                f"seed={ckpt.meta.get('seed')}, not mode={run.mode} "
                f"seed={seed}")
        checkpoint_to_pset(ckpt, pset)
        for label, state in ckpt.adam.items():
            adams[label].load_state_dict(state)
        for episode in ckpt.episodes:
            traj.add_episode(episode)
        restored = dict(ckpt.counters)
        returns = [float(r) for r in restored.pop("returns", [])]
        counters.update(restored)
        rows = [dict(r) for r in ckpt.metrics]

    replay = relabel_experience(traj, sac, filt, dec) if len(traj) else None
    if replay is not None:
        stats.relabels += 1

    def save(path):
        snapshot = dict(counters)
        snapshot["returns"] = list(returns)
        save_checkpoint(path, _make_checkpoint(
            cfg_sha, cfg, seed, pset, adams, traj, snapshot, rows))

    try:
        for ep in range(counters["episode"], run.episodes):
            state, obs, target = env_reset(substream(seed, "reset", ep), arm)
            if gssm_mode:
                fh, fx, fa = filt.init_state(1)
                fh, fq, fx = filt.step(fh, fx, fa, Tensor(obs[None]))
                latent = fq.mean.data[0]
            else:
                latent = None
            episode = []
            ep_return = 0.0
            for t in range(arm.episode_steps):
                c = target.as_array()
                s = build_rl_state(obs, latent, c, sac)
                if ep < run.explore_episodes:
                    action = substream(seed, "explore", ep, t).uniform(
                        0.0, 1.0, size=sac.action_dim)
                else:
                    a_t, _ = actor_sample(pset, sac, Tensor(s[None]),
                                          rng=substream(seed, "act", ep, t))
                    action = a_t.data[0]
                state, obs_next, r, done = env_step(state, action, target,
                                                    arm, step_index=t)
                new_target = mid_episode_retarget(
                    t + 1, substream(seed, "retarget", ep), arm)
                if new_target is not None:
                    target = new_target
                c_next = target.as_array()
                episode.append(ExperienceTuple(
                    oc=np.concatenate([s[:sac.obs_dim], c]),
                    action=action.copy(), reward=r,
                    oc_next=np.concatenate([obs_next, c_next]), done=done))
                ep_return += r
                if gssm_mode:
                    fh, fq, fx = filt.step(fh, fx, Tensor(action[None]),
                                           Tensor(obs_next[None]))
                    latent = fq.mean.data[0]
                obs = obs_next
                if ep >= run.sac_start_episode and replay is not None \
                        and len(replay) >= sac.batch_size:
                    for _ in range(run.updates_per_step):
                        u = counters["sac_updates"]
                        batch = replay.sample(
                            sac.batch_size, substream(seed, "sample", u))
                        critic_update(pset, sac, batch, adams["critic"],
                                      substream(seed, "sac-critic", u))
                        a_out = actor_update(pset, sac, batch["state"],
                                             adams["actor"],
                                             substream(seed, "sac-actor", u))
                        alpha_update(pset, sac, a_out["mean_logp"],
                                     adams["alpha"])
                        target_soft_update(pset, sac)
                        counters["sac_updates"] += 1
                        stats.sac_updates += 1
            traj.add_episode(episode)
            returns.append(ep_return)
            stats.episodes_run += 1
            counters["episode"] = ep + 1

            gssm_nll = gssm_kl = float("nan")
            update_due = (ep + 1) % run.eval_cadence == 0
            if update_due and gssm_mode:
                trajectories = [episode_arrays(e, sac) for e in traj.episodes]
                history = train_gssm(
                    filt, dec, trans, trajectories, cfg.gssm_train,
                    substream(seed, "gssm", counters["gssm_updates"]),
                    adam=adams["gssm"])
                gssm_nll = history[-1]["nll"]
                gssm_kl = history[-1]["kl"]
                counters["gssm_updates"] += 1
                stats.gssm_updates += 1
            replay = relabel_experience(traj, sac, filt, dec)
            stats.relabels += 1

            if update_due:
                policy = SACPolicy(pset, sac, filt, dec)
                rmse = evaluate_rmse(
                    policy, arm, run.eval_episodes,
                    substream(seed, "eval", counters["eval_idx"]))
                window = returns[-run.eval_cadence:]
                rows.append({
                    "episode": ep + 1,
                    "rmse_deg": rmse,
                    "mean_return": float(np.mean(window)),
                    "alpha": alpha_value(pset),
                    "gssm_nll": gssm_nll,
                    "gssm_kl": gssm_kl,
                    "sac_updates": counters["sac_updates"],
                })
                counters["eval_idx"] += 1
                stats.eval_points += 1
                _flush_metrics(out_dir, rows, provenance, resolved)
                save(out_dir / "checkpoint.bin")
    except (TrainingError, SimulationError) as exc:
        save(out_dir / "checkpoint.bin")
        (out_dir / "run.log").write_text(
            f"aborted at episode {counters['episode']}: {exc}\n")
        raise

    _flush_metrics(out_dir, rows, provenance, resolved)
    save(out_dir / "checkpoint.bin")
    return {"metrics": rows, "stats": stats, "out_dir": out_dir}


def load_policy(ckpt_path, cfg: ExperimentConfig) -> SACPolicy:
    """Rebuild a frozen evaluation policy from a checkpoint file."""
    ckpt = load_checkpoint(ckpt_path)
    mode = ckpt.meta.get("mode", "gssm")
    pset = ParameterSet()
    run_cfg = cfg.run
    original_mode = run_cfg.mode
    try:
        run_cfg.mode = mode
        filt, dec, _ = build_models(pset, cfg, int(ckpt.meta.get("seed", 0)))
    finally:
        run_cfg.mode = original_mode
    checkpoint_to_pset(ckpt, pset)
    return SACPolicy(pset, cfg.sac, filt, dec)
