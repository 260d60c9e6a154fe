"""Filter recursion, losses, and state-space training on synthetic systems."""

import numpy as np
import pytest
from scipy.stats import norm, pearsonr

from fatiguerl.errors import ContractError, DimensionError, InputError
from fatiguerl.gssm import (
    DiagGaussian,
    Decoder,
    Filter,
    GSSMConfig,
    GSSMTrainConfig,
    LOG_2PI,
    eval_gssm_loss,
    filter_trajectory,
    kl_diag_gaussians,
    kl_loss,
    likelihood_loss,
    train_gssm,
)
from fatiguerl.nn import ParameterSet, Tape, Tensor, gru_step, mlp_forward
from fatiguerl.nn import tensor as T
from fatiguerl.transitions import GatedTransition

TINY = GSSMConfig(obs_dim=1, action_dim=0, latent_dim=1, hidden=8,
                  ws_hidden=8, head_hidden=8)


def _build(cfg=TINY, seed=0):
    pset = ParameterSet()
    rng = np.random.default_rng(seed)
    filt = Filter(pset, cfg, rng)
    dec = Decoder(pset, cfg, rng)
    trans = GatedTransition(pset, cfg.latent_dim, rng, hidden=8)
    return pset, filt, dec, trans


def _zero_params(pset):
    for name in pset.names():
        pset[name].data = np.zeros_like(pset[name].data)


# ------------------------------------------------------------------- filter


def test_filter_init_zeros_and_deterministic():
    _, filt, _, _ = _build()
    h, x, a = filt.init_state(3)
    assert h.data.shape == (3, 8) and not h.data.any()
    assert x.data.shape == (3, 1) and not x.data.any()
    assert a.data.shape == (3, 0)
    h2, x2, _ = filt.init_state(3)
    np.testing.assert_array_equal(h.data, h2.data)
    np.testing.assert_array_equal(x.data, x2.data)


def test_filter_step_zero_params_mean_is_head_bias():
    pset, filt, _, _ = _build()
    _zero_params(pset)
    pset["filter.wx.b1"].data = np.array([0.7, -3.0])
    h, x, a = filt.init_state(2)
    h_t, q, x_t = filt.step(h, x, a, Tensor(np.zeros((2, 1))))
    np.testing.assert_array_equal(h_t.data, np.zeros((2, 8)))
    np.testing.assert_allclose(q.mean.data, np.full((2, 1), 0.7), rtol=0)
    np.testing.assert_allclose(q.var.data, np.full((2, 1), np.log1p(np.exp(-3.0))),
                               rtol=1e-12)
    np.testing.assert_array_equal(x_t.data, q.mean.data)


def test_combined_state_bounded():
    cfg = GSSMConfig(obs_dim=3, action_dim=2, latent_dim=4, hidden=16,
                     ws_hidden=8, head_hidden=8)
    pset, filt, _, _ = _build(cfg, seed=9)
    rng = np.random.default_rng(10)
    for name in pset.names():
        if name.startswith("filter"):
            pset[name].data = rng.normal(size=pset[name].data.shape)
    h = Tensor(rng.normal(size=(5, 16)))
    x = Tensor(rng.normal(size=(5, 4)))
    a = Tensor(rng.normal(size=(5, 2)))
    o = Tensor(rng.normal(size=(5, 3)))
    h_t = gru_step(pset, "filter.gru", o, h)
    h_x = mlp_forward(pset, "filter.ws", filt.ws_spec, T.concat([x, a], axis=1))
    h_c = T.tanh(h_x + h_t) * 0.5
    assert np.max(np.abs(h_c.data)) < 0.5


def test_floored_variance_sample_near_mean():
    pset, filt, _, _ = _build(seed=2)
    pset["filter.wx.b1"].data = np.array([0.3, -40.0])
    pset["filter.wx.W1"].data[:, 1] = 0.0
    h, x, a = filt.init_state(4)
    _, q, x_t = filt.step(h, x, a, Tensor(np.ones((4, 1))),
                          noise=np.full((4, 1), 0.5))
    np.testing.assert_array_equal(q.var.data, np.full((4, 1), 1e-6))
    assert np.max(np.abs(x_t.data - q.mean.data)) < 1e-3


def test_filter_rejects_nonfinite_observation():
    _, filt, _, _ = _build()
    h, x, a = filt.init_state(1)
    with pytest.raises(InputError):
        filt.step(h, x, a, Tensor(np.array([[np.nan]])))


def test_reparam_gradient_of_mean_is_one():
    mean = Tensor(np.array([[0.3, -0.2]]), requires_grad=True)
    var = Tensor(np.array([[0.5, 0.25]]))
    noise = np.array([[1.7, -0.4]])
    with Tape() as tape:
        x = mean + T.sqrt(var) * Tensor(noise)
        loss = T.tsum(x)
    g = tape.backward(loss).get(mean)
    np.testing.assert_array_equal(g, np.ones((1, 2)))


# ------------------------------------------------------------------ decoder


def test_decoder_zero_params_mean_is_bias():
    pset, _, dec, _ = _build()
    _zero_params(pset)
    pset["decoder.b1"].data = np.array([1.5, 0.0])
    k = dec.decode(Tensor(np.random.default_rng(0).normal(size=(3, 1))))
    np.testing.assert_array_equal(k.mean.data, np.full((3, 1), 1.5))


def test_decoder_stateless_over_batch():
    _, _, dec, _ = _build(seed=4)
    xs = np.random.default_rng(5).normal(size=(6, 1))
    batch = dec.decode(Tensor(xs))
    for i in range(6):
        single = dec.decode(Tensor(xs[i:i + 1]))
        np.testing.assert_allclose(single.mean.data, batch.mean.data[i:i + 1],
                                   atol=1e-14)
        np.testing.assert_allclose(single.var.data, batch.var.data[i:i + 1],
                                   atol=1e-14)


# ------------------------------------------------------------------- losses


def test_likelihood_zero_residual_closed_form():
    t_steps, dims = 7, 3
    obs = [np.random.default_rng(t).normal(size=(1, dims)) for t in range(t_steps)]
    dists = [DiagGaussian(Tensor(o), Tensor(np.ones((1, dims)))) for o in obs]
    loss = likelihood_loss(dists, obs)
    assert abs(loss.data.item() - t_steps * dims * 0.5 * LOG_2PI) < 1e-12


def test_likelihood_matches_scipy_logpdf():
    rng = np.random.default_rng(6)
    obs, dists, expect = [], [], 0.0
    for _ in range(4):
        o = rng.normal(size=(1, 2))
        mu = rng.normal(size=(1, 2))
        var = rng.uniform(0.2, 2.0, size=(1, 2))
        obs.append(o)
        dists.append(DiagGaussian(Tensor(mu), Tensor(var)))
        expect -= norm.logpdf(o, loc=mu, scale=np.sqrt(var)).sum()
    loss = likelihood_loss(dists, obs)
    assert abs(loss.data.item() - expect) < 1e-10


def test_likelihood_monotone_in_residual():
    o = [np.array([[1.0]])]
    near = likelihood_loss([DiagGaussian(Tensor([[0.9]]), Tensor([[1.0]]))], o)
    far = likelihood_loss([DiagGaussian(Tensor([[0.5]]), Tensor([[1.0]]))], o)
    assert near.data.item() < far.data.item()


def test_likelihood_rejects_subfloor_variance():
    o = [np.array([[0.0]])]
    with pytest.raises(ContractError):
        likelihood_loss([DiagGaussian(Tensor([[0.0]]), Tensor([[1e-9]]))], o)


def test_kl_identical_is_exactly_zero():
    p = DiagGaussian(Tensor([[0.3, 1.2]]), Tensor([[0.5, 2.0]]))
    q = DiagGaussian(Tensor([[0.3, 1.2]]), Tensor([[0.5, 2.0]]))
    assert kl_diag_gaussians(p, q).data.item() == 0.0


def test_kl_unit_gaussians_mean_shift():
    p = DiagGaussian(Tensor([[0.0]]), Tensor([[1.0]]))
    q = DiagGaussian(Tensor([[1.0]]), Tensor([[1.0]]))
    assert abs(kl_diag_gaussians(p, q).data.item() - 0.5) < 1e-14


def test_kl_nonnegative_fuzz():
    rng = np.random.default_rng(7)
    for _ in range(1000):
        p = DiagGaussian(Tensor(rng.normal(size=(1, 3))),
                         Tensor(rng.uniform(0.05, 3.0, size=(1, 3))))
        q = DiagGaussian(Tensor(rng.normal(size=(1, 3))),
                         Tensor(rng.uniform(0.05, 3.0, size=(1, 3))))
        assert kl_diag_gaussians(p, q).data.item() >= 0.0


def test_kl_matches_monte_carlo():
    rng = np.random.default_rng(8)
    mu_p, var_p = np.array([0.4, -1.0]), np.array([0.6, 1.8])
    mu_q, var_q = np.array([-0.2, 0.5]), np.array([1.1, 0.7])
    closed = kl_diag_gaussians(
        DiagGaussian(Tensor(mu_p[None]), Tensor(var_p[None])),
        DiagGaussian(Tensor(mu_q[None]), Tensor(var_q[None]))).data.item()
    samples = mu_p + np.sqrt(var_p) * rng.standard_normal((100_000, 2))
    log_p = norm.logpdf(samples, mu_p, np.sqrt(var_p)).sum(axis=1)
    log_q = norm.logpdf(samples, mu_q, np.sqrt(var_q)).sum(axis=1)
    mc = float(np.mean(log_p - log_q))
    assert abs(closed - mc) / abs(closed) < 0.01


def test_kl_width_mismatch():
    p = DiagGaussian(Tensor([[0.0, 0.0]]), Tensor([[1.0, 1.0]]))
    q = DiagGaussian(Tensor([[0.0]]), Tensor([[1.0]]))
    with pytest.raises(DimensionError):
        kl_diag_gaussians(p, q)


def test_kl_loss_zero_single_additive():
    rng = np.random.default_rng(9)
    qs = [DiagGaussian(Tensor(rng.normal(size=(1, 2))),
                       Tensor(rng.uniform(0.1, 1.0, size=(1, 2))))
          for _ in range(6)]
    assert kl_loss(qs, qs).data.item() == 0.0
    ps = [DiagGaussian(Tensor(rng.normal(size=(1, 2))),
                       Tensor(rng.uniform(0.1, 1.0, size=(1, 2))))
          for _ in range(6)]
    single = kl_loss(qs[:1], ps[:1]).data.item()
    assert abs(single - kl_diag_gaussians(qs[0], ps[0]).data.item()) < 1e-15
    whole = kl_loss(qs, ps).data.item()
    parts = kl_loss(qs[:2], ps[:2]).data.item() + kl_loss(qs[2:], ps[2:]).data.item()
    assert abs(whole - parts) < 1e-10
    with pytest.raises(ContractError):
        kl_loss(qs, ps[:3])


# ------------------------------------------------------------ trajectories


def test_filter_trajectory_length_one():
    _, filt, dec, _ = _build(seed=11)
    traj = filter_trajectory(filt, dec, np.array([[0.4]]), np.zeros((1, 0)))
    assert len(traj) == 1
    assert traj.latent.shape == (1, 1)


def test_filter_trajectory_deterministic_sampling():
    _, filt, dec, _ = _build(seed=12)
    obs = np.random.default_rng(13).normal(size=(9, 1))
    act = np.zeros((9, 0))
    a = filter_trajectory(filt, dec, obs, act, np.random.default_rng(42))
    b = filter_trajectory(filt, dec, obs, act, np.random.default_rng(42))
    np.testing.assert_array_equal(a.latent, b.latent)
    np.testing.assert_array_equal(a.recon_mean, b.recon_mean)


def test_filter_causality():
    _, filt, dec, _ = _build(seed=14)
    obs = np.random.default_rng(15).normal(size=(8, 1))
    act = np.zeros((8, 0))
    base = filter_trajectory(filt, dec, obs, act)
    bumped_obs = obs.copy()
    bumped_obs[5] += 10.0
    bumped = filter_trajectory(filt, dec, bumped_obs, act)
    np.testing.assert_array_equal(base.latent[:5], bumped.latent[:5])
    assert not np.array_equal(base.latent[5], bumped.latent[5])


def test_filter_trajectory_rejects_empty():
    _, filt, dec, _ = _build()
    with pytest.raises(ContractError):
        filter_trajectory(filt, dec, np.zeros((0, 1)), np.zeros((0, 0)))


# ----------------------------------------------------------------- training


def _linear_gaussian_trajs(n_trajs, t_steps, seed):
    rng = np.random.default_rng(seed)
    trajs = []
    for _ in range(n_trajs):
        x = rng.normal()
        obs = np.empty((t_steps, 1))
        for t in range(t_steps):
            obs[t, 0] = x + 0.1 * rng.standard_normal()
            x = 0.9 * x + 0.1 + 0.1 * rng.standard_normal()
        trajs.append((obs, np.zeros((t_steps, 0))))
    return trajs


def test_train_gssm_loss_halves():
    drops = []
    for seed in range(5):
        pset, filt, dec, trans = _build(seed=seed)
        trajs = _linear_gaussian_trajs(8, 20, seed + 100)
        hyper = GSSMTrainConfig(steps=500, batch_size=4, bptt_len=20, lr=3e-3)
        hist = train_gssm(filt, dec, trans, trajs, hyper,
                          np.random.default_rng(seed + 200))
        early = hist[10]["total"]
        late = np.mean([h["total"] for h in hist[-20:]])
        drops.append((early - late) / abs(early))
    assert np.median(drops) >= 0.5


def test_train_gssm_zero_kl_weight_freezes_transition():
    pset, filt, dec, trans = _build(seed=21)
    before = {n: pset[n].data.copy() for n in pset.names() if n.startswith("trans")}
    hyper = GSSMTrainConfig(steps=5, batch_size=2, bptt_len=10, kl_weight=0.0)
    train_gssm(filt, dec, trans, _linear_gaussian_trajs(3, 10, 22), hyper,
               np.random.default_rng(23))
    for name, val in before.items():
        np.testing.assert_array_equal(pset[name].data, val)


def test_train_gssm_frozen_params_loss_constant():
    pset, filt, dec, trans = _build(seed=24)
    for name in pset.names():
        pset.set_trainable(name, False)
    trajs = _linear_gaussian_trajs(3, 10, 25)
    loss_before = eval_gssm_loss(filt, dec, trans, trajs)
    state_before = pset.state_dict()
    hyper = GSSMTrainConfig(steps=5, batch_size=2, bptt_len=10)
    train_gssm(filt, dec, trans, trajs, hyper, np.random.default_rng(26))
    loss_after = eval_gssm_loss(filt, dec, trans, trajs)
    assert loss_before == loss_after
    state_after = pset.state_dict()
    for name in state_before:
        np.testing.assert_array_equal(state_before[name], state_after[name])


@pytest.fixture(scope="module")
def trained_linear_gssm():
    """A small model trained on a 1-D linear-Gaussian system, for oracle tests."""
    pset, filt, dec, trans = _build(seed=31)
    trajs = _linear_gaussian_trajs(12, 30, 32)
    hyper = GSSMTrainConfig(steps=1500, batch_size=4, bptt_len=30, lr=3e-3)
    train_gssm(filt, dec, trans, trajs, hyper, np.random.default_rng(33))
    return filt, dec


def _kalman_means(obs, a=0.9, b=0.1, q=0.01, r=0.01):
    """Scalar Kalman filter posterior means for o_t = x_t + noise."""
    mean, var = 0.0, 1.0
    out = []
    for o in obs[:, 0]:
        k = var / (var + r)
        mean = mean + k * (o - mean)
        var = (1 - k) * var
        out.append(mean)
        mean = a * mean + b
        var = a * a * var + q
    return np.array(out)


def test_trained_filter_tracks_kalman(trained_linear_gssm):
    filt, dec = trained_linear_gssm
    obs = _linear_gaussian_trajs(1, 60, 999)[0][0]
    traj = filter_trajectory(filt, dec, obs, np.zeros((60, 0)))
    kalman = _kalman_means(obs)
    r_latent = pearsonr(traj.mean[:, 0], kalman)[0]
    assert abs(r_latent) > 0.9
    r_recon = pearsonr(traj.recon_mean[:, 0], kalman)[0]
    assert r_recon > 0.9


def test_trained_reconstruction_below_noise(trained_linear_gssm):
    filt, dec = trained_linear_gssm
    obs = _linear_gaussian_trajs(1, 60, 998)[0][0]
    traj = filter_trajectory(filt, dec, obs, np.zeros((60, 0)))
    rmse = float(np.sqrt(np.mean((traj.recon_mean - obs) ** 2)))
    assert rmse < 0.1
