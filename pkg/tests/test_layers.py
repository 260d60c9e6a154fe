"""MLP/GRU layers and Adam against closed forms and finite differences."""

import numpy as np
import pytest

from fatiguerl.errors import ContractError, DimensionError, TrainingError
from fatiguerl.nn import (
    AdamState,
    MLPSpec,
    ParameterSet,
    Tape,
    Tensor,
    adam_step,
    clip_global_norm,
    finite_diff_check,
    gru_step,
    init_gru,
    init_mlp,
    mlp_forward,
)
from fatiguerl.nn import tensor as T


def _mlp(sizes, hidden_act="tanh", out_act="identity", seed=0):
    pset = ParameterSet()
    spec = MLPSpec(sizes=list(sizes), hidden_act=hidden_act, out_act=out_act)
    init_mlp(pset, "net", spec, np.random.default_rng(seed))
    return pset, spec


def test_identity_mlp():
    pset, spec = _mlp([2, 2])
    pset["net.W0"].data = np.eye(2)
    pset["net.b0"].data = np.zeros(2)
    x = np.array([[3.0, -1.5]])
    out = mlp_forward(pset, "net", spec, Tensor(x))
    np.testing.assert_array_equal(out.data, x)


def test_zero_net_sigmoid_half():
    pset, spec = _mlp([3, 4], out_act="sigmoid")
    pset["net.W0"].data = np.zeros((3, 4))
    out = mlp_forward(pset, "net", spec, Tensor(np.random.default_rng(0).normal(size=(5, 3))))
    np.testing.assert_array_equal(out.data, np.full((5, 4), 0.5))


def test_mlp_against_manual_forward():
    pset, spec = _mlp([2, 8, 8, 2], seed=3)
    rng = np.random.default_rng(4)
    x = rng.normal(size=(6, 2))
    out = mlp_forward(pset, "net", spec, Tensor(x))
    h = np.tanh(x @ pset["net.W0"].data + pset["net.b0"].data)
    h = np.tanh(h @ pset["net.W1"].data + pset["net.b1"].data)
    expect = h @ pset["net.W2"].data + pset["net.b2"].data
    np.testing.assert_allclose(out.data, expect, atol=1e-12, rtol=0)


def test_mlp_dim_error_names_layer():
    pset, spec = _mlp([2, 4])
    with pytest.raises(DimensionError, match="net"):
        mlp_forward(pset, "net", spec, Tensor(np.ones((1, 3))))


def test_mlp_finite_diff():
    pset, spec = _mlp([3, 8, 8, 2], seed=5)
    x = Tensor(np.random.default_rng(6).normal(size=(4, 3)))
    tgt = np.random.default_rng(7).normal(size=(4, 2))

    def loss_fn():
        out = mlp_forward(pset, "net", spec, x)
        return T.tsum(T.square(out - Tensor(tgt)))

    assert finite_diff_check(loss_fn, pset, eps=1e-5) < 1e-4


def test_gru_zero_params_zero_state():
    pset = ParameterSet()
    init_gru(pset, "cell", 3, 4, np.random.default_rng(0))
    for name in pset.names():
        pset[name].data = np.zeros_like(pset[name].data)
    h = gru_step(pset, "cell", Tensor(np.ones((2, 3))), Tensor(np.zeros((2, 4))))
    np.testing.assert_array_equal(h.data, np.zeros((2, 4)))


def test_gru_update_gate_saturation():
    pset = ParameterSet()
    init_gru(pset, "cell", 3, 4, np.random.default_rng(1))
    pset["cell.bz"].data = np.full(4, 40.0)
    h_prev = np.random.default_rng(2).normal(size=(2, 4)) * 0.5
    h = gru_step(pset, "cell", Tensor(np.ones((2, 3))), Tensor(h_prev))
    np.testing.assert_allclose(h.data, h_prev, atol=1e-6, rtol=0)


def test_gru_output_bounded():
    pset = ParameterSet()
    init_gru(pset, "cell", 5, 8, np.random.default_rng(3))
    rng = np.random.default_rng(4)
    h = gru_step(
        pset, "cell",
        Tensor(rng.normal(size=(10, 5)) * 3.0),
        Tensor(np.tanh(rng.normal(size=(10, 8)))),
    )
    assert np.max(np.abs(h.data)) < 1.0


def test_gru_batch_mismatch():
    pset = ParameterSet()
    init_gru(pset, "cell", 3, 4, np.random.default_rng(0))
    with pytest.raises(DimensionError, match="cell"):
        gru_step(pset, "cell", Tensor(np.ones((2, 3))), Tensor(np.ones((3, 4))))


def test_gru_finite_diff():
    pset = ParameterSet()
    init_gru(pset, "cell", 3, 4, np.random.default_rng(5))
    x = Tensor(np.random.default_rng(6).normal(size=(2, 3)))
    h0 = Tensor(np.random.default_rng(7).normal(size=(2, 4)) * 0.3)

    def loss_fn():
        h = gru_step(pset, "cell", x, h0)
        h = gru_step(pset, "cell", x, h)
        return T.tsum(T.square(h))

    assert finite_diff_check(loss_fn, pset, eps=1e-5) < 1e-4


def test_planted_fault_detected():
    pset, spec = _mlp([2, 4, 1], seed=8)
    x = Tensor(np.random.default_rng(9).normal(size=(3, 2)))

    def loss_fn():
        return T.tsum(T.square(mlp_forward(pset, "net", spec, x)))

    with Tape() as tape:
        loss = loss_fn()
    grads = tape.backward(loss).for_params(pset)
    grads["net.W0"] = grads["net.W0"] * 2.0
    err = finite_diff_check(loss_fn, pset, eps=1e-5, grads=grads)
    assert 0.45 < err < 0.55


def test_linear_finite_diff_tiny_error():
    pset = ParameterSet()
    pset.add("w", np.array([[1.5, -0.5]]))
    x = Tensor(np.array([[2.0], [3.0]]))

    def loss_fn():
        return T.tsum(T.matmul(x, pset["w"]))

    assert finite_diff_check(loss_fn, pset, eps=1e-5) < 1e-9


def test_adam_zero_grad_no_move():
    pset = ParameterSet()
    w = pset.add("w", np.array([1.0, 2.0]))
    state = AdamState(lr=0.01)
    adam_step(pset, {"w": np.zeros(2)}, state)
    np.testing.assert_array_equal(w.data, np.array([1.0, 2.0]))


def test_adam_first_step_magnitude():
    pset = ParameterSet()
    w = pset.add("w", np.array([0.0]))
    adam_step(pset, {"w": np.array([1.0])}, AdamState(lr=0.01))
    assert abs(w.data[0] + 0.01) < 1e-6


def test_adam_nan_grad_names_param():
    pset = ParameterSet()
    pset.add("w", np.array([0.0]))
    with pytest.raises(TrainingError, match="'w'"):
        adam_step(pset, {"w": np.array([np.nan])}, AdamState())


def test_adam_deterministic_trajectories():
    def run():
        pset, spec = _mlp([2, 4, 1], seed=11)
        state = AdamState(lr=1e-3)
        x = Tensor(np.random.default_rng(12).normal(size=(5, 2)))
        for _ in range(5):
            with Tape() as tape:
                loss = T.tsum(T.square(mlp_forward(pset, "net", spec, x)))
            grads = tape.backward(loss).for_params(pset)
            adam_step(pset, grads, state)
        return pset.state_dict()

    a, b = run(), run()
    for name in a:
        np.testing.assert_array_equal(a[name], b[name])


def test_clip_global_norm():
    grads = {"a": np.array([3.0]), "b": np.array([4.0])}
    total = clip_global_norm(grads, 1.0)
    assert abs(total - 5.0) < 1e-12
    joint = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    assert abs(joint - 1.0) < 1e-12
    grads2 = {"a": np.array([0.3])}
    clip_global_norm(grads2, 10.0)
    np.testing.assert_array_equal(grads2["a"], np.array([0.3]))


def test_duplicate_param_name_rejected():
    pset = ParameterSet()
    pset.add("w", np.zeros(1))
    with pytest.raises(ContractError):
        pset.add("w", np.zeros(1))


def test_frozen_params_excluded_from_grads():
    pset = ParameterSet()
    w = pset.add("w", np.array([[2.0]]))
    p = pset.add("prior", np.array([[3.0]]), trainable=False)
    with Tape() as tape:
        loss = T.tsum(T.matmul(pset["w"], pset["prior"]))
    grads = tape.backward(loss).for_params(pset)
    assert "w" in grads and "prior" not in grads
    np.testing.assert_array_equal(grads["w"], p.data.T)
    assert not w.data is None
