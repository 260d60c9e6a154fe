"""Exact Gaussian-process regression with a squared-exponential kernel.

The gold-standard reference model for scoring learned transitions: fit on
observed (x_t, x_{t+1}) pairs, hyperparameters picked by log marginal
likelihood over a small declared grid, predictions by Cholesky solves.
Predictive variance includes the noise term, so it is the variance of a new
observed target, bounded by [sigma_n^2, sigma_f^2 + sigma_n^2].
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve_triangular

from .errors import ContractError, NumericalError

DEFAULT_GRID = {
    "lengthscale": (0.1, 0.2, 0.5, 1.0, 2.0),
    "signal_var": (0.5, 1.0, 2.0),
    "noise_var": (1e-4, 1e-3, 1e-2),
}


@dataclass
class GPModel:
    x: np.ndarray            # [n] training inputs
    y: np.ndarray            # [n] targets
    lengthscale: float
    signal_var: float
    noise_var: float
    chol: np.ndarray         # lower Cholesky factor of K + noise*I
    alpha: np.ndarray        # (K + noise*I)^-1 y
    lml: float               # log marginal likelihood at the chosen hypers


def se_kernel(xa: np.ndarray, xb: np.ndarray, lengthscale: float,
              signal_var: float) -> np.ndarray:
    sq = (xa[:, None] - xb[None, :]) ** 2
    return signal_var * np.exp(-0.5 * sq / lengthscale**2)


def _factor(x, y, lengthscale, signal_var, noise_var):
    """Cholesky of K + noise*I with jitter escalation; returns (L, alpha, lml)."""
    n = len(x)
    k = se_kernel(x, x, lengthscale, signal_var)
    jitter = 0.0
    for _ in range(8):
        try:
            c, low = cho_factor(k + (noise_var + jitter) * np.eye(n), lower=True)
        except np.linalg.LinAlgError:
            jitter = 1e-10 * signal_var if jitter == 0.0 else jitter * 10.0
            continue
        alpha = cho_solve((c, low), y)
        lml = (-0.5 * float(y @ alpha)
               - float(np.sum(np.log(np.diag(c))))
               - 0.5 * n * math.log(2.0 * math.pi))
        return np.tril(c), alpha, lml
    raise NumericalError(
        f"kernel factorization failed even with jitter {jitter:.1e}"
    )


def log_marginal_likelihood(x, y, lengthscale, signal_var, noise_var) -> float:
    return _factor(np.asarray(x, float), np.asarray(y, float),
                   lengthscale, signal_var, noise_var)[2]


def gp_fit(x, y, grid: dict = None) -> GPModel:
    """Fit hyperparameters by maximum log marginal likelihood over a grid."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if len(x) != len(y) or len(x) < 2:
        raise ContractError(f"need matched inputs/targets of size >= 2, got {len(x)}/{len(y)}")
    grid = grid or DEFAULT_GRID
    best = None
    for ls in grid["lengthscale"]:
        for sf2 in grid["signal_var"]:
            for sn2 in grid["noise_var"]:
                chol, alpha, lml = _factor(x, y, ls, sf2, sn2)
                if best is None or lml > best[0]:
                    best = (lml, ls, sf2, sn2, chol, alpha)
    lml, ls, sf2, sn2, chol, alpha = best
    return GPModel(x=x, y=y, lengthscale=ls, signal_var=sf2, noise_var=sn2,
                   chol=chol, alpha=alpha, lml=lml)


def gp_predict(model: GPModel, xs) -> tuple:
    """Posterior predictive (mean, variance) arrays at query points.

    Variance is the observed-target variance (latent variance plus noise).
    """
    xs = np.asarray(xs, dtype=np.float64).reshape(-1)
    ks = se_kernel(model.x, xs, model.lengthscale, model.signal_var)
    mean = ks.T @ model.alpha
    v = solve_triangular(model.chol, ks, lower=True)
    var = model.signal_var - np.sum(v * v, axis=0) + model.noise_var
    return mean, np.maximum(var, model.noise_var * (1.0 - 1e-9))
