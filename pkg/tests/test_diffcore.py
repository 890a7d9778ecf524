from __future__ import annotations

import math

import numpy as np
import pytest

from epolab import diffcore as dc

# First Adam step with g=1, lr=1e-3: lr * 1 / (1 + eps), computed by hand.
ADAM_FIRST_STEP = 0.0009999999900000003


def test_matmul_identity():
    g = dc.Graph()
    m = np.arange(9.0).reshape(3, 3)
    assert np.array_equal(dc.matmul(g.const(np.eye(3)), g.const(m)).value, m)


def test_logsumexp_and_log_sigmoid_values():
    g = dc.Graph()
    assert math.isclose(float(dc.logsumexp([g.const(0.0), g.const(0.0)]).value), math.log(2), abs_tol=1e-15)
    assert math.isclose(float(dc.log_sigmoid(g.const(0.0)).value), -math.log(2), abs_tol=1e-15)


def test_stable_forms_do_not_overflow():
    g = dc.Graph()
    big = dc.logsumexp(g.const(np.array([1000.0, 1000.0])))
    assert math.isclose(float(big.value), 1000.0 + math.log(2))
    assert math.isclose(float(dc.log_sigmoid(g.const(-800.0)).value), -800.0)
    assert float(dc.log_sigmoid(g.const(800.0)).value) == 0.0


def test_square_derivative():
    g = dc.Graph()
    x = g.leaf(np.array(3.0), name="x")
    grads = g.backward(x * x)
    assert grads["x"] == 6.0


def test_duplicated_input_accumulates():
    g = dc.Graph()
    x = g.leaf(np.array([1.5, -2.0]), name="x")
    grads = g.backward(dc.sum(dc.mul(x, x)))
    assert np.array_equal(grads["x"], 2 * x.value)


def test_logsumexp_gradient_is_softmax():
    a = np.array([0.3, -1.2, 2.0, 0.0])
    g = dc.Graph()
    x = g.leaf(a, name="a")
    grads = g.backward(dc.logsumexp(x))
    soft = np.exp(a - a.max()) / np.exp(a - a.max()).sum()
    np.testing.assert_allclose(grads["a"], soft, rtol=1e-14)


def test_logsumexp_list_gradient_is_softmax():
    a = [0.1, 0.7, -0.4]
    g = dc.Graph()
    xs = [g.leaf(np.array(v), name=f"x{i}") for i, v in enumerate(a)]
    grads = g.backward(dc.logsumexp(xs))
    soft = np.exp(a) / np.exp(a).sum()
    np.testing.assert_allclose([grads[f"x{i}"] for i in range(3)], soft, rtol=1e-14)


def test_shape_mismatch_names_both_shapes():
    g = dc.Graph()
    with pytest.raises(ValueError, match=r"\(2, 3\).*\(4,\)|\(4,\).*\(2, 3\)"):
        dc.add(g.const(np.zeros((2, 3))), g.const(np.zeros(4)))
    with pytest.raises(ValueError, match="3"):
        dc.matmul(g.const(np.zeros((2, 3))), g.const(np.zeros((2, 3))))


def test_backward_rejects_non_scalar_root():
    g = dc.Graph()
    x = g.leaf(np.ones(3), name="x")
    with pytest.raises(ValueError):
        g.backward(dc.tanh(x))


def test_forward_ops_match_numpy():
    rng = np.random.default_rng(1)
    a, b = rng.standard_normal((3, 4)), rng.standard_normal((3, 4))
    w, bias = rng.standard_normal((2, 4)), rng.standard_normal(2)
    g = dc.Graph()
    A, B = g.const(a), g.const(b)
    assert np.array_equal(dc.sub(A, B).value, a - b)
    assert np.array_equal(dc.mul(A, B).value, a * b)
    assert np.array_equal(dc.tanh(A).value, np.tanh(a))
    np.testing.assert_allclose(dc.sigmoid(A).value, 1 / (1 + np.exp(-a)), rtol=1e-15)
    np.testing.assert_allclose(dc.affine(A, g.const(w), g.const(bias)).value, a @ w.T + bias, rtol=1e-15)
    assert np.array_equal(dc.squared_error(A, B).value, (a - b) ** 2)
    assert np.array_equal(dc.concat([A, B], axis=1).value, np.concatenate([a, b], axis=1))
    np.testing.assert_allclose(dc.mean(A, axis=0).value, a.mean(axis=0), rtol=1e-15)


def _mlp_loss(params, x):
    g = dc.Graph()
    p = {k: g.leaf(v, name=k) for k, v in params.items()}
    h = dc.tanh(dc.affine(g.const(x), p["W0"], p["b0"]))
    y = dc.affine(h, p["W1"], p["b1"])
    return g, dc.mean(dc.squared_error(y, g.const(np.ones(y.shape))))


def test_two_layer_mlp_matches_central_differences():
    rng = np.random.default_rng(7)
    params = {"W0": rng.standard_normal((5, 3)), "b0": rng.standard_normal(5),
              "W1": rng.standard_normal((2, 5)), "b1": rng.standard_normal(2)}
    x = rng.standard_normal((4, 3))
    g, loss = _mlp_loss(params, x)
    grads = g.backward(loss)
    h = 1e-4
    worst = 0.0
    for name, arr in params.items():
        for idx in np.ndindex(arr.shape):
            up = {k: v.copy() for k, v in params.items()}
            dn = {k: v.copy() for k, v in params.items()}
            up[name][idx] += h
            dn[name][idx] -= h
            num = (float(_mlp_loss(up, x)[1].value) - float(_mlp_loss(dn, x)[1].value)) / (2 * h)
            ana = grads[name][idx]
            worst = max(worst, abs(ana - num) / max(abs(ana), abs(num), 1e-6))
    assert worst < 1e-4


def test_adam_zero_gradient_keeps_params():
    params = {"w": np.array([1.0, -2.0])}
    new, state = dc.adam_step(params, {"w": np.zeros(2)}, dc.AdamState(lr=1e-3))
    assert np.array_equal(new["w"], params["w"])
    assert state.step == 1


def test_adam_first_step_hand_value():
    new, state = dc.adam_step({"w": np.array(0.0)}, {"w": np.array(1.0)}, dc.AdamState(lr=1e-3))
    assert math.isclose(-float(new["w"]), ADAM_FIRST_STEP, rel_tol=1e-12)


def test_adam_is_deterministic():
    def run():
        rng = np.random.default_rng(3)
        params, state = {"w": rng.standard_normal(4)}, dc.AdamState(lr=1e-2)
        for _ in range(20):
            params, state = dc.adam_step(params, {"w": rng.standard_normal(4)}, state)
        return params["w"]
    assert np.array_equal(run(), run())


def test_adam_rejects_non_finite_gradient_with_name():
    with pytest.raises(FloatingPointError, match="bias"):
        dc.adam_step({"bias": np.zeros(2)}, {"bias": np.array([0.0, np.nan])}, dc.AdamState())


def test_adam_state_round_trip():
    params, state = {"w": np.array([0.5, 1.5])}, dc.AdamState(lr=1e-3)
    params, state = dc.adam_step(params, {"w": np.array([0.1, -0.2])}, state)
    again = dc.AdamState.from_dict(state.to_dict())
    a, _ = dc.adam_step(params, {"w": np.array([0.3, 0.3])}, state)
    b, _ = dc.adam_step(params, {"w": np.array([0.3, 0.3])}, again)
    assert np.array_equal(a["w"], b["w"])
