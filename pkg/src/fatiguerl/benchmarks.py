"""Kink-system transition benchmark.

A 1-D nonlinear system with known ground truth generates transition data; an
exact GP fit on the observed pairs is the gold standard. Each transition
variant (gated, ensemble) is trained inside an identical state-space model on
identical data, then scored in observation space: encode a test point with
the filter, push the latent through the transition, marginalize the decoder
over the predicted latent by Gauss-Hermite quadrature, and take the KL from
the GP's predictive to the model's. Lower is better; the direction charges
models for confident mass where the gold standard has support.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import TrainingError
from .gp import GPModel, gp_fit, gp_predict
from .gssm import Decoder, Filter, GSSMConfig, GSSMTrainConfig, train_gssm
from .nn import ParameterSet
from .nn.tensor import Tensor
from .reporting import code_hash, write_csv
from .rng import substream
from .transitions import EnsembleTransition, GatedTransition


@dataclass
class KinkSystem:
    sigma_p: float = 0.05
    sigma_o: float = 0.02


def kink_f(x: float) -> float:
    """Ground-truth transition map with a sharp bend near the origin."""
    return 0.8 + (x + 0.2) * (1.0 - 5.0 / (1.0 + math.exp(-2.0 * x)))


def kink_step(x: float, rng: np.random.Generator, sigma_p: float = 0.05) -> float:
    return kink_f(x) + sigma_p * rng.standard_normal()


def generate_kink_dataset(n_steps: int, x0: float, rng: np.random.Generator,
                          sigma_p: float = 0.05) -> np.ndarray:
    """Iterate kink_step; returns the latent state trajectory [n_steps]."""
    if n_steps < 2:
        raise ValueError(f"need at least 2 steps, got {n_steps}")
    xs = np.empty(n_steps)
    xs[0] = x0
    for t in range(1, n_steps):
        xs[t] = kink_step(xs[t - 1], rng, sigma_p)
    return xs


def observe(xs: np.ndarray, rng: np.random.Generator, sigma_o: float) -> np.ndarray:
    return xs + sigma_o * rng.standard_normal(len(xs))


def transition_pairs(obs: np.ndarray) -> tuple:
    return obs[:-1], obs[1:]


# ------------------------------------------------------- model-side predictive

_GH_NODES, _GH_WEIGHTS = np.polynomial.hermite.hermgauss(15)
_GH_W = _GH_WEIGHTS / math.sqrt(math.pi)


def observation_predictive(filt: Filter, decoder: Decoder, transition,
                           points: np.ndarray) -> tuple:
    """One-step predictive (mean, var) in observation space at each point.

    Encodes each point with a cold-start filter step (mean propagation),
    predicts the next latent with the transition, and moment-matches the
    decoder marginal over that latent via 15-node Gauss-Hermite quadrature.
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1)
    b = len(points)
    h, x, a = filt.init_state(b)
    _, q, xbar = filt.step(h, x, a, Tensor(points[:, None]))
    p_lat = transition.predict(xbar)
    mu = p_lat.mean.data[:, 0]
    sd = np.sqrt(2.0 * p_lat.var.data[:, 0])
    sites = mu[:, None] + sd[:, None] * _GH_NODES[None, :]
    k = decoder.decode(Tensor(sites.reshape(-1, 1)))
    m = k.mean.data.reshape(b, -1)
    v = k.var.data.reshape(b, -1)
    mean = (m * _GH_W).sum(axis=1)
    second = ((v + m * m) * _GH_W).sum(axis=1)
    var = np.maximum(second - mean * mean, 1e-9)
    return mean, var


def _kl_1d(mu_p, var_p, mu_q, var_q):
    return 0.5 * (np.log(var_q / var_p) + (var_p + (mu_p - mu_q) ** 2) / var_q - 1.0)


def evaluate_transition_kl(predict_fn, gp: GPModel, test_points: np.ndarray,
                           reverse: bool = False) -> float:
    """Mean over test points of KL[GP || model] (or the reverse direction)."""
    test_points = np.asarray(test_points, dtype=np.float64).reshape(-1)
    if len(test_points) == 0:
        raise ValueError("test_points must be nonempty")
    gp_mean, gp_var = gp_predict(gp, test_points)
    m_mean, m_var = predict_fn(test_points)
    if reverse:
        kls = _kl_1d(m_mean, m_var, gp_mean, gp_var)
    else:
        kls = _kl_1d(gp_mean, gp_var, m_mean, m_var)
    return float(np.mean(kls))


def coverage95(predict_fn, obs_pairs: tuple) -> float:
    """Fraction of held-out next observations inside the model's 95% interval."""
    x_prev, x_next = obs_pairs
    mean, var = predict_fn(x_prev)
    half = 1.96 * np.sqrt(var)
    return float(np.mean(np.abs(x_next - mean) <= half))


# ---------------------------------------------------------------- experiment


@dataclass
class KinkBenchConfig:
    n_steps: int = 600
    x0: float = 0.5
    sigma_p: float = 0.05
    sigma_o: float = 0.02
    n_test: int = 100
    heldout_steps: int = 200
    latent_dim: int = 1
    hidden: int = 16
    ws_hidden: int = 8
    head_hidden: int = 16
    trans_hidden: int = 64
    n_members: int = 10
    beta: float = 1.0
    train: GSSMTrainConfig = field(default_factory=lambda: GSSMTrainConfig(
        steps=600, batch_size=8, bptt_len=25, lr=3e-3))


def _train_variant(variant: str, obs: np.ndarray, cfg: KinkBenchConfig,
                   seed: int):
    """Build and train one state-space model with the named transition."""
    pset = ParameterSet()
    init_rng = substream(seed, "kink-init", 0 if variant == "gated" else 1)
    gcfg = GSSMConfig(obs_dim=1, action_dim=0, latent_dim=cfg.latent_dim,
                      hidden=cfg.hidden, ws_hidden=cfg.ws_hidden,
                      head_hidden=cfg.head_hidden)
    filt = Filter(pset, gcfg, init_rng)
    dec = Decoder(pset, gcfg, init_rng)
    if variant == "gated":
        trans = GatedTransition(pset, cfg.latent_dim, init_rng,
                                hidden=cfg.trans_hidden)
    else:
        trans = EnsembleTransition(pset, cfg.latent_dim, init_rng,
                                   n_members=cfg.n_members, beta=cfg.beta,
                                   hidden=cfg.trans_hidden)
    trajs = [(obs[:, None], np.zeros((len(obs), 0)))]
    train_gssm(filt, dec, trans, trajs, cfg.train,
               substream(seed, "kink-train", 0 if variant == "gated" else 1))
    return filt, dec, trans


def run_kink_benchmark(cfg: KinkBenchConfig, n_seeds: int,
                       out_dir=None) -> dict:
    """Train both transition variants per seed and score them against the GP.

    Returns {"rows": per-seed records, "summary": per-variant mean/std}; a
    seed whose training diverges is recorded with failed=1 and excluded from
    aggregates. Writes report.csv when out_dir is given.
    """
    if n_seeds < 2:
        raise ValueError(f"need at least 2 seeds, got {n_seeds}")
    rows = []
    for seed in range(n_seeds):
        xs = generate_kink_dataset(cfg.n_steps, cfg.x0,
                                   substream(seed, "kink-data"), cfg.sigma_p)
        obs = observe(xs, substream(seed, "kink-obs"), cfg.sigma_o)
        gp = gp_fit(*transition_pairs(obs))
        held_xs = generate_kink_dataset(cfg.heldout_steps, cfg.x0,
                                        substream(seed, "kink-held"), cfg.sigma_p)
        held = observe(held_xs, substream(seed, "kink-held-obs"), cfg.sigma_o)
        held_pairs = transition_pairs(held)
        grid = np.linspace(obs.min(), obs.max(), cfg.n_test)
        for variant in ("gated", "ensemble"):
            try:
                filt, dec, trans = _train_variant(variant, obs, cfg, seed)
                fn = lambda pts: observation_predictive(filt, dec, trans, pts)
                rows.append({
                    "seed": seed, "variant": variant,
                    "mean_kl": evaluate_transition_kl(fn, gp, grid),
                    "reverse_kl": evaluate_transition_kl(fn, gp, grid, reverse=True),
                    "coverage95": coverage95(fn, held_pairs),
                    "failed": 0,
                })
            except TrainingError:
                rows.append({"seed": seed, "variant": variant,
                             "mean_kl": float("nan"), "reverse_kl": float("nan"),
                             "coverage95": float("nan"), "failed": 1})
    summary = {}
    for variant in ("gated", "ensemble"):
        kls = [r["mean_kl"] for r in rows
               if r["variant"] == variant and not r["failed"]]
        covs = [r["coverage95"] for r in rows
                if r["variant"] == variant and not r["failed"]]
        summary[variant] = {
            "mean_kl": float(np.mean(kls)) if kls else float("nan"),
            "std_kl": float(np.std(kls)) if kls else float("nan"),
            "median_kl": float(np.median(kls)) if kls else float("nan"),
            "median_coverage95": float(np.median(covs)) if covs else float("nan"),
            "n_ok": len(kls),
        }
    if out_dir is not None:
        write_csv(f"{out_dir}/report.csv",
                  ["seed", "variant", "mean_kl", "reverse_kl", "coverage95", "failed"],
                  rows, provenance=f"code={code_hash()}")
    return {"rows": rows, "summary": summary}
