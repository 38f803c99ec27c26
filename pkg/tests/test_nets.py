import math

import numpy as np
import pytest

from workcell import nets
from workcell.nets import (
    DenseLayer, MlpParams, adam_init, init_mlp, make_mlp, mlp_backward,
    mlp_forward, optimizer_step, polyak_update,
)


def reference_forward(params, x):
    """Straight-line reimplementation: plain loops, math.erf, float64."""
    x = [float(v) for v in x]
    n = len(params.layers)
    for i, layer in enumerate(params.layers):
        w = layer.w.astype(float)
        b = layer.b.astype(float)
        z = [sum(w[o][k] * x[k] for k in range(len(x))) + b[o]
             for o in range(w.shape[0])]
        if i == n - 1 and not params.activate_last:
            x = z
            continue
        mu = sum(z) / len(z)
        var = sum((v - mu) ** 2 for v in z) / len(z)
        inv = 1.0 / math.sqrt(var + 1e-5)
        a = [float(layer.gain[o]) * (z[o] - mu) * inv + float(layer.shift[o])
             for o in range(len(z))]
        x = [0.5 * v * (1.0 + math.erf(v / math.sqrt(2.0))) for v in a]
    return np.array(x)


def finite_difference_grads(params, x, loss_weights, h=1e-5):
    flat = nets.get_flat(params)
    grads = np.zeros_like(flat)
    for i in range(flat.size):
        for sign in (1.0, -1.0):
            probe = flat.copy()
            probe[i] += sign * h
            nets.set_flat(params, probe)
            y, _ = mlp_forward(params, x)
            grads[i] += sign * float(loss_weights @ y)
    nets.set_flat(params, flat)
    return grads / (2.0 * h)


def test_zero_params_annihilate_any_input():
    rng = np.random.default_rng(0)
    params = init_mlp([5, 7, 3], rng)
    for layer in params.layers:
        layer.w[...] = 0.0
        layer.gain[...] = 0.0
    y, _ = mlp_forward(params, rng.normal(size=5))
    assert np.all(y == 0.0)


def test_identity_single_plain_layer():
    params = MlpParams(
        [DenseLayer(np.eye(4), np.zeros(4), np.ones(4), np.zeros(4))],
        activate_last=False,
    )
    x = np.array([0.3, -1.2, 0.0, 4.5])
    y, _ = mlp_forward(params, x)
    np.testing.assert_allclose(y, x, rtol=0, atol=0)


def test_forward_matches_independent_reimplementation():
    rng = np.random.default_rng(42)
    params = init_mlp([4, 8, 2], rng, activate_last=True, dtype=np.float64)
    x = rng.normal(size=4)
    y, _ = mlp_forward(params, x)
    np.testing.assert_allclose(y, reference_forward(params, x), atol=1e-12)


def test_forward_rejects_wrong_width():
    params = init_mlp([4, 4], np.random.default_rng(0))
    with pytest.raises(ValueError):
        mlp_forward(params, np.zeros(5))


def test_forward_deterministic():
    rng = np.random.default_rng(3)
    params = init_mlp([6, 16, 16, 2], rng)
    x = rng.normal(size=(5, 6)).astype(np.float32)
    y1, _ = mlp_forward(params, x)
    y2, _ = mlp_forward(params, x)
    assert np.array_equal(y1, y2)


def test_layernorm_statistics():
    # pre-activation mean ~= shift and variance ~= gain^2 for scalar settings;
    # inputs scaled up so the eps inside the normalizer is negligible
    rng = np.random.default_rng(9)
    params = init_mlp([32, 64], rng, dtype=np.float64)
    gain, shift = 1.7, -0.4
    params.layers[0].gain[...] = gain
    params.layers[0].shift[...] = shift
    x = 10.0 * rng.normal(size=32)
    _, tape = mlp_forward(params, x)
    a = tape.a[0][0]
    assert abs(a.mean() - shift) < 1e-6
    assert abs(a.var() - gain * gain) < 1e-6


def test_backward_constant_head_gives_zero_grads():
    rng = np.random.default_rng(5)
    params = init_mlp([3, 4, 2], rng, activate_last=False, dtype=np.float64)
    params.layers[-1].w[...] = 0.0
    x = rng.normal(size=3)
    y, tape = mlp_forward(params, x)
    grads, dx = mlp_backward(tape, np.ones_like(y))
    # everything upstream of the zero head is cut off
    for i in range(len(params.layers) - 1):
        for arr in (grads.layers[i].w, grads.layers[i].b):
            assert np.all(arr == 0.0)
    assert np.all(dx == 0.0)
    assert np.any(grads.layers[-1].b != 0.0)


def test_backward_single_linear_layer_closed_form():
    rng = np.random.default_rng(6)
    w = rng.normal(size=(3, 5))
    params = MlpParams(
        [DenseLayer(w, np.zeros(3), np.ones(3), np.zeros(3))],
        activate_last=False,
    )
    x = rng.normal(size=5)
    g = rng.normal(size=3)
    _, tape = mlp_forward(params, x)
    grads, dx = mlp_backward(tape, g)
    np.testing.assert_allclose(grads.layers[0].w, np.outer(g, x), atol=1e-14)
    np.testing.assert_allclose(grads.layers[0].b, g, atol=1e-14)
    np.testing.assert_allclose(dx, g @ w, atol=1e-14)


def test_backward_matches_finite_differences():
    rng = np.random.default_rng(7)
    params = make_mlp(6, 16, 2, rng, out_width=1, dtype=np.float64)
    x = rng.normal(size=6)
    lw = np.ones(1)
    y, tape = mlp_forward(params, x)
    grads, _ = mlp_backward(tape, lw)
    fd = finite_difference_grads(params, x, lw)
    analytic = nets.get_flat(grads)
    denom = np.maximum(np.abs(fd), 1e-6)
    assert np.max(np.abs(analytic - fd) / denom) < 1e-4


def test_gradient_fd_agreement_over_random_mlps():
    rng = np.random.default_rng(11)
    for _ in range(50):
        depth = int(rng.integers(1, 5))
        widths = [int(rng.integers(2, 33)) for _ in range(depth + 1)]
        activate_last = bool(rng.integers(0, 2))
        params = init_mlp(widths, rng, activate_last=activate_last,
                          dtype=np.float64)
        x = rng.normal(size=widths[0])
        lw = rng.normal(size=widths[-1])
        y, tape = mlp_forward(params, x)
        grads, _ = mlp_backward(tape, lw)
        fd = finite_difference_grads(params, x, lw)
        analytic = nets.get_flat(grads)
        denom = np.maximum(np.abs(fd), 1e-4)
        assert np.max(np.abs(analytic - fd) / denom) < 1e-4


def test_backward_rejects_mismatched_gradient():
    rng = np.random.default_rng(8)
    params = init_mlp([3, 4], rng)
    _, tape = mlp_forward(params, np.zeros(3, dtype=np.float32))
    with pytest.raises(ValueError):
        mlp_backward(tape, np.zeros(5))


def test_adam_zero_gradient_keeps_params():
    rng = np.random.default_rng(12)
    params = init_mlp([3, 3], rng)
    before = nets.get_flat(params).copy()
    state = adam_init(params, lr=1e-3)
    zero = nets.zeros_like_params(params)
    assert optimizer_step(state, params, zero)
    np.testing.assert_array_equal(nets.get_flat(params), before)
    assert state.step == 1

    # moments decay by exactly the beta factors under a zero gradient
    g = init_mlp([3, 3], rng)
    optimizer_step(state, params, g)
    m_before = nets.get_flat(state.m).copy()
    v_before = nets.get_flat(state.v).copy()
    optimizer_step(state, params, zero)
    np.testing.assert_allclose(nets.get_flat(state.m), 0.9 * m_before,
                               rtol=1e-6)
    np.testing.assert_allclose(nets.get_flat(state.v), 0.999 * v_before,
                               rtol=1e-6)


def test_learning_rate_decay_schedule():
    rng = np.random.default_rng(13)
    params = init_mlp([2, 2], rng)
    state = adam_init(params, lr=5e-5, lr_decay=0.98)
    state.step = 100_000
    assert state.effective_lr == pytest.approx(4.9e-5)
    state.step = 99_999
    assert state.effective_lr == pytest.approx(5e-5)


def test_constant_gradient_descends_monotonically():
    params = MlpParams(
        [DenseLayer(np.array([[5.0]]), np.zeros(1), np.ones(1), np.zeros(1))],
        activate_last=False,
    )
    grads = MlpParams(
        [DenseLayer(np.array([[1.0]]), np.zeros(1), np.zeros(1), np.zeros(1))],
        activate_last=False,
    )
    state = adam_init(params, lr=1e-2)
    values = [params.layers[0].w[0, 0]]
    for _ in range(100):
        optimizer_step(state, params, grads)
        values.append(params.layers[0].w[0, 0])
    assert all(b < a for a, b in zip(values, values[1:]))


def test_nonfinite_gradient_skips_step():
    rng = np.random.default_rng(14)
    params = init_mlp([2, 2], rng)
    state = adam_init(params, lr=1e-3)
    bad = nets.zeros_like_params(params)
    bad.layers[0].w[0, 0] = np.nan
    before = nets.get_flat(params).copy()
    assert not optimizer_step(state, params, bad)
    assert state.step == 0
    np.testing.assert_array_equal(nets.get_flat(params), before)


def test_polyak_endpoints_and_paper_value():
    rng = np.random.default_rng(15)
    target = init_mlp([3, 3], rng, dtype=np.float64)
    online = init_mlp([3, 3], rng, dtype=np.float64)
    t0 = nets.get_flat(target).copy()
    polyak_update(target, online, 0.0)
    np.testing.assert_array_equal(nets.get_flat(target), t0)
    polyak_update(target, online, 1.0)
    np.testing.assert_allclose(nets.get_flat(target), nets.get_flat(online))

    scalar_t = MlpParams([DenseLayer(np.array([[0.0]]), np.zeros(1),
                                     np.zeros(1), np.zeros(1))], False)
    scalar_o = MlpParams([DenseLayer(np.array([[1.0]]), np.zeros(1),
                                     np.zeros(1), np.zeros(1))], False)
    polyak_update(scalar_t, scalar_o, 8e-5)
    assert scalar_t.layers[0].w[0, 0] == pytest.approx(8e-5)


def test_polyak_is_a_contraction():
    rng = np.random.default_rng(16)
    target = init_mlp([4, 4], rng, dtype=np.float64)
    online = init_mlp([4, 4], rng, dtype=np.float64)
    tau = 0.12
    gap_before = nets.get_flat(target) - nets.get_flat(online)
    polyak_update(target, online, tau)
    gap_after = nets.get_flat(target) - nets.get_flat(online)
    np.testing.assert_allclose(gap_after, (1 - tau) * gap_before, atol=1e-12)
