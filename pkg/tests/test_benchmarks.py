"""Kink system, GP gold standard, and the KL evaluation harness."""

import math

import numpy as np
import pytest

from fatiguerl.benchmarks import (
    KinkBenchConfig,
    coverage95,
    evaluate_transition_kl,
    generate_kink_dataset,
    kink_f,
    kink_step,
    observe,
    run_kink_benchmark,
    transition_pairs,
)
from fatiguerl.gp import (
    DEFAULT_GRID,
    gp_fit,
    gp_predict,
    log_marginal_likelihood,
    se_kernel,
)
from fatiguerl.gssm import GSSMTrainConfig

# ---------------------------------------------------------------------- kink


def test_kink_fixed_points():
    assert kink_f(-0.2) == 0.8
    assert abs(kink_f(0.0) - 0.5) < 1e-15


def test_kink_negative_branch():
    # independent evaluation of the declared form at x = -3
    expect = 0.8 + (-3.0 + 0.2) * (1.0 - 5.0 / (1.0 + math.exp(6.0)))
    assert abs(expect - (-1.965383275807113)) < 1e-12
    assert abs(kink_f(-3.0) - expect) < 1e-15


def test_kink_step_noise_free_deterministic():
    rng = np.random.default_rng(0)
    assert kink_step(-0.2, rng, sigma_p=0.0) == 0.8


def test_generate_dataset_deterministic_iteration():
    xs = generate_kink_dataset(3, -0.2, np.random.default_rng(0), sigma_p=0.0)
    f08 = 0.8 + (0.8 + 0.2) * (1.0 - 5.0 / (1.0 + math.exp(-1.6)))
    np.testing.assert_allclose(xs, [-0.2, 0.8, f08], atol=1e-15)


def test_generate_dataset_seed_and_pairs():
    a = generate_kink_dataset(50, 0.5, np.random.default_rng(7))
    b = generate_kink_dataset(50, 0.5, np.random.default_rng(7))
    np.testing.assert_array_equal(a, b)
    x_prev, x_next = transition_pairs(a)
    assert len(x_prev) == len(x_next) == 49
    np.testing.assert_array_equal(x_prev, a[:-1])
    with pytest.raises(ValueError):
        generate_kink_dataset(1, 0.0, np.random.default_rng(0))


# ------------------------------------------------------------------------ gp


def test_gp_zero_targets_zero_mean():
    x = np.linspace(-2, 2, 25)
    model = gp_fit(x, np.zeros(25))
    mean, _ = gp_predict(model, np.linspace(-2, 2, 40))
    assert np.max(np.abs(mean)) < 1e-6


def test_gp_near_interpolation():
    rng = np.random.default_rng(1)
    x = np.linspace(-1, 1, 15)
    y = np.sin(2 * x)
    grid = {"lengthscale": (0.5,), "signal_var": (1.0,), "noise_var": (1e-8,)}
    model = gp_fit(x, y, grid)
    mean, _ = gp_predict(model, x)
    assert np.max(np.abs(mean - y)) < 1e-3


def test_gp_lml_matches_dense_solve():
    rng = np.random.default_rng(2)
    x = rng.uniform(-2, 2, 20)
    y = np.sin(x) + 0.1 * rng.standard_normal(20)
    ls, sf2, sn2 = 0.7, 1.3, 1e-3
    lml = log_marginal_likelihood(x, y, ls, sf2, sn2)
    k = se_kernel(x, x, ls, sf2) + sn2 * np.eye(20)
    sign, logdet = np.linalg.slogdet(k)
    expect = (-0.5 * y @ np.linalg.inv(k) @ y - 0.5 * logdet
              - 10.0 * math.log(2 * math.pi))
    assert sign > 0
    assert abs(lml - expect) < 1e-8


def test_gp_variance_far_from_data():
    x = np.linspace(0.0, 1.0, 10)
    grid = {"lengthscale": (0.2,), "signal_var": (1.5,), "noise_var": (1e-3,)}
    model = gp_fit(x, np.sin(x), grid)
    _, var = gp_predict(model, np.array([1.0 + 10 * 0.2 + 1.0]))
    assert abs(var[0] - (1.5 + 1e-3)) / (1.5 + 1e-3) < 0.01


def test_gp_variance_bounds_fuzz():
    rng = np.random.default_rng(3)
    for _ in range(5):
        x = rng.uniform(-3, 3, 30)
        y = np.tanh(x) + 0.05 * rng.standard_normal(30)
        model = gp_fit(x, y)
        _, var = gp_predict(model, rng.uniform(-6, 6, 50))
        upper = model.signal_var + model.noise_var
        assert np.all(var <= upper * (1 + 1e-9))
        assert np.all(var >= model.noise_var * (1 - 1e-6))


def test_gp_batch_equals_pointwise():
    rng = np.random.default_rng(4)
    x = rng.uniform(-1, 1, 12)
    model = gp_fit(x, np.cos(x))
    pts = rng.uniform(-1, 1, 6)
    bm, bv = gp_predict(model, pts)
    for i, p in enumerate(pts):
        sm, sv = gp_predict(model, np.array([p]))
        assert abs(sm[0] - bm[i]) < 1e-12
        assert abs(sv[0] - bv[i]) < 1e-12


def test_gp_grid_selection_prefers_likely_hypers():
    rng = np.random.default_rng(5)
    x = np.linspace(-2, 2, 60)
    y = np.sin(3 * x) + 0.03 * rng.standard_normal(60)
    model = gp_fit(x, y)
    # a wiggly function with small noise wants a short lengthscale
    assert model.lengthscale <= 0.5
    assert model.lml >= log_marginal_likelihood(x, y, 2.0, 1.0, 1e-2) - 1e-9


# ------------------------------------------------------------- kl evaluation


def test_kl_zero_for_gp_itself():
    x = np.linspace(-1, 1, 20)
    model = gp_fit(x, np.sin(x))
    pts = np.linspace(-1, 1, 30)
    fn = lambda q: gp_predict(model, q)
    assert evaluate_transition_kl(fn, model, pts) == 0.0


def test_kl_inflated_variance_closed_form():
    x = np.linspace(-1, 1, 20)
    model = gp_fit(x, np.sin(x))
    pts = np.linspace(-1, 1, 30)

    def inflated(q):
        m, v = gp_predict(model, q)
        return m, 10.0 * v

    got = evaluate_transition_kl(inflated, model, pts)
    expect = 0.5 * (0.1 + math.log(10.0) - 1.0)
    assert abs(got - expect) < 1e-9


def test_kl_mean_invariant_to_duplication():
    x = np.linspace(-1, 1, 15)
    model = gp_fit(x, np.sin(x))
    pts = np.linspace(-0.5, 0.5, 10)

    def biased(q):
        m, v = gp_predict(model, q)
        return m + 0.1, v

    single = evaluate_transition_kl(biased, model, pts)
    doubled = evaluate_transition_kl(biased, model, np.concatenate([pts, pts]))
    assert abs(single - doubled) < 1e-12


def test_coverage95_calibrated_model():
    rng = np.random.default_rng(6)
    x_prev = rng.uniform(-1, 1, 4000)
    x_next = 0.5 * x_prev + 0.1 * rng.standard_normal(4000)
    fn = lambda q: (0.5 * q, np.full(len(q), 0.01))
    cov = coverage95(fn, (x_prev, x_next))
    assert 0.93 < cov < 0.97


# ------------------------------------------------------------ full benchmark


def test_run_kink_benchmark_smoke(tmp_path):
    cfg = KinkBenchConfig(
        n_steps=60, heldout_steps=30, n_test=20, hidden=8, ws_hidden=4,
        head_hidden=8, trans_hidden=8, n_members=2,
        train=GSSMTrainConfig(steps=30, batch_size=2, bptt_len=15))
    report = run_kink_benchmark(cfg, n_seeds=2, out_dir=str(tmp_path))
    assert len(report["rows"]) == 4
    variants = {(r["seed"], r["variant"]) for r in report["rows"]}
    assert variants == {(0, "gated"), (0, "ensemble"), (1, "gated"), (1, "ensemble")}
    for key in ("gated", "ensemble"):
        assert report["summary"][key]["n_ok"] == 2
        assert np.isfinite(report["summary"][key]["mean_kl"])
    text = (tmp_path / "report.csv").read_text()
    assert text.startswith("# code=")
    assert "seed,variant,mean_kl,reverse_kl,coverage95,failed" in text
    with pytest.raises(ValueError):
        run_kink_benchmark(cfg, n_seeds=1)


def test_run_kink_benchmark_deterministic():
    cfg = KinkBenchConfig(
        n_steps=40, heldout_steps=20, n_test=10, hidden=8, ws_hidden=4,
        head_hidden=8, trans_hidden=8, n_members=2,
        train=GSSMTrainConfig(steps=10, batch_size=2, bptt_len=10))
    a = run_kink_benchmark(cfg, n_seeds=2)
    b = run_kink_benchmark(cfg, n_seeds=2)
    for ra, rb in zip(a["rows"], b["rows"]):
        assert ra == rb
