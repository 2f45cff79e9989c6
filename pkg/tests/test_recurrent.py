import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fpconvlstm.recurrent import (
    ConvLstmParams, LstmParams, LstmState, bptt_backward, convlstm_step, lstm_step,
    param_names, unroll_sequence, zero_state,
)
from fpconvlstm.tensor import ShapeError

from conftest import central_difference, max_rel_error


def sig(x):
    return 1 / (1 + math.exp(-x))


def dense_params(hidden, inputs, rng=None, scale=1.0, fill=None, dtype=np.float64):
    def w():
        if fill is not None:
            return np.full((hidden, hidden + inputs), fill, dtype)
        return (scale * rng.standard_normal((hidden, hidden + inputs))).astype(dtype)

    def b():
        if fill is not None:
            return np.zeros(hidden, dtype)
        return (scale * rng.standard_normal(hidden)).astype(dtype)
    return LstmParams(w(), w(), w(), w(), b(), b(), b(), b())


def conv_params(hidden, inputs, k=3, rng=None, scale=0.5, dtype=np.float64):
    def kern():
        if rng is None:
            return np.zeros((k, k, hidden + inputs, hidden), dtype)
        return (scale * rng.standard_normal((k, k, hidden + inputs, hidden))).astype(dtype)

    def b():
        if rng is None:
            return np.zeros(hidden, dtype)
        return (scale * rng.standard_normal(hidden)).astype(dtype)
    return ConvLstmParams(kern(), kern(), kern(), kern(), b(), b(), b(), b())


def state(h, c):
    return LstmState(np.asarray(h, float), np.asarray(c, float))


# -- lstm_step --------------------------------------------------------------------

def test_zero_weights_zero_cell():
    p = dense_params(3, 2, fill=0.0)
    s, g = lstm_step(p, state(np.zeros(3), np.zeros(3)), np.array([0.3, -7.0]))
    for gate in (g.f, g.i, g.o):
        np.testing.assert_array_equal(gate, 0.5)
    np.testing.assert_array_equal(g.c_tilde, 0.0)
    np.testing.assert_array_equal(s.c, 0.0)
    np.testing.assert_array_equal(s.h, 0.0)


def test_zero_weights_cell_two():
    p = dense_params(1, 1, fill=0.0)
    s, _ = lstm_step(p, state([0.0], [2.0]), np.array([5.0]))
    assert abs(s.c[0] - 1.0) < 1e-12
    assert abs(s.h[0] - 0.5 * math.tanh(1.0)) < 1e-12
    assert abs(s.h[0] - 0.38079707797788) < 1e-6


def test_unit_weights_hand_evaluation():
    p = dense_params(1, 1, fill=1.0)
    s, g = lstm_step(p, state([0.0], [0.0]), np.array([1.0]))
    c = sig(1) * math.tanh(1)
    for gate in (g.f, g.i, g.o):
        assert abs(gate[0] - sig(1)) < 1e-12
    assert abs(g.c_tilde[0] - math.tanh(1)) < 1e-12
    assert abs(s.c[0] - c) < 1e-12
    assert abs(s.h[0] - sig(1) * math.tanh(c)) < 1e-12


def test_step_shape_mismatch():
    p = dense_params(2, 3, fill=0.0)
    with pytest.raises(ShapeError):
        lstm_step(p, state(np.zeros(2), np.zeros(2)), np.zeros(4))
    with pytest.raises(ShapeError):
        lstm_step(p, state(np.zeros(3), np.zeros(3)), np.zeros(3))


def test_params_must_share_shapes():
    p = dense_params(2, 3, fill=0.0)
    with pytest.raises(ShapeError):
        LstmParams(p.W_f, p.W_i, p.W_c, np.zeros((2, 4)), p.b_f, p.b_i, p.b_c, p.b_o)


@given(st.integers(0, 2**31), st.floats(0.1, 10))
def test_gate_ranges_and_cell_bound(seed, scale):
    r = np.random.default_rng(seed)
    p = dense_params(4, 3, r, scale=scale)
    prev = state(r.uniform(-1, 1, 4), scale * r.standard_normal(4))
    s, g = lstm_step(p, prev, scale * r.standard_normal(3))
    # saturation can round a gate to exactly 0 or 1 in floating point
    for gate in (g.f, g.i, g.o):
        assert np.all((gate >= 0) & (gate <= 1))
    assert np.all(np.abs(g.c_tilde) <= 1)
    assert np.all(np.abs(s.c) <= np.abs(prev.c) + 1 + 1e-12)


@given(st.integers(0, 2**31))
def test_gate_ranges_strict_for_moderate_inputs(seed):
    r = np.random.default_rng(seed)
    p = dense_params(4, 3, r, scale=0.5)
    _, g = lstm_step(p, state(np.zeros(4), np.zeros(4)), r.uniform(-1, 1, 3))
    for gate in (g.f, g.i, g.o):
        assert np.all((gate > 0) & (gate < 1))
    assert np.all(np.abs(g.c_tilde) < 1)


# -- convlstm_step ----------------------------------------------------------------

def test_conv_zero_params_zero_state():
    p = conv_params(2, 1)
    s, g = convlstm_step(p, zero_state(p, np.zeros((4, 5, 1))), np.ones((4, 5, 1)))
    np.testing.assert_array_equal(s.h, 0.0)
    np.testing.assert_array_equal(g.f, 0.5)
    np.testing.assert_array_equal(g.o, 0.5)


def test_conv_constant_cell_two():
    p = conv_params(3, 1)
    prev = LstmState(np.zeros((4, 4, 3)), np.full((4, 4, 3), 2.0))
    s, _ = convlstm_step(p, prev, np.random.default_rng(0).random((4, 4, 1)))
    np.testing.assert_allclose(s.h, 0.5 * math.tanh(1.0), atol=1e-12)


def conv_from_dense(p):
    k = {f"K_{g}": getattr(p, f"W_{g}").T[None, None].copy() for g in "fico"}
    return ConvLstmParams(**k, **{f"b_{g}": getattr(p, f"b_{g}") for g in "fico"})


@pytest.mark.parametrize("dtype, tol", [(np.float32, 1e-6), (np.float64, 1e-12)])
@pytest.mark.parametrize("seed", range(5))
def test_one_by_one_conv_equals_dense(seed, dtype, tol):
    r = np.random.default_rng(seed)
    p = dense_params(1, 1, r, dtype=dtype)
    cp = conv_from_dense(p)
    h, c, x = r.standard_normal(3).astype(dtype)
    ds, dg = lstm_step(p, LstmState(np.array([h]), np.array([c])), np.array([x]))
    cs, cg = convlstm_step(cp, LstmState(np.full((1, 1, 1), h), np.full((1, 1, 1), c)),
                           np.full((1, 1, 1), x))
    assert max_rel_error(cs.h.ravel(), ds.h) <= tol
    assert max_rel_error(cs.c.ravel(), ds.c) <= tol
    assert max_rel_error(cg.block.ravel(), dg.block) <= tol


def test_one_by_one_kernels_act_pixelwise(rng):
    p = dense_params(2, 1, rng)
    cp = conv_from_dense(p)
    x = rng.standard_normal((3, 4, 1))
    s, _ = convlstm_step(cp, zero_state(cp, x), x)
    for y in range(3):
        for xx in range(4):
            ds, _ = lstm_step(p, state(np.zeros(2), np.zeros(2)), x[y, xx])
            np.testing.assert_allclose(s.h[y, xx], ds.h, rtol=1e-12)


def test_conv_frame_mismatch():
    p = conv_params(2, 1)
    with pytest.raises(ShapeError):
        convlstm_step(p, zero_state(p, np.zeros((4, 4, 1))), np.zeros((4, 5, 1)))


def test_even_kernel_rejected():
    with pytest.raises(ShapeError):
        conv_params(2, 1, k=2)


# -- unroll -----------------------------------------------------------------------

def test_unroll_single_step_equals_step(rng):
    p = dense_params(3, 2, rng)
    x = rng.standard_normal((1, 2))
    states, caches = unroll_sequence("dense", p, x)
    s, g = lstm_step(p, state(np.zeros(3), np.zeros(3)), x[0])
    assert len(states) == 2 and len(caches) == 1
    np.testing.assert_array_equal(states[1].h, s.h)
    np.testing.assert_array_equal(caches[0].block, g.block)


def test_unroll_zero_params_gives_zero_hidden(rng):
    states, _ = unroll_sequence("conv", conv_params(2, 1), rng.random((4, 3, 3, 1)))
    for s in states:
        np.testing.assert_array_equal(s.h, 0.0)


def test_unroll_two_steps_matches_hand_chain():
    p = dense_params(1, 1, fill=1.0)
    x = np.array([[1.0], [0.5]])
    states, _ = unroll_sequence("dense", p, x)
    c1 = sig(1) * math.tanh(1)
    h1 = sig(1) * math.tanh(c1)
    z = h1 + 0.5
    c2 = sig(z) * c1 + sig(z) * math.tanh(z)
    h2 = sig(z) * math.tanh(c2)
    assert abs(states[2].c[0] - c2) < 1e-12
    assert abs(states[2].h[0] - h2) < 1e-12


def test_unroll_empty_sequence():
    with pytest.raises(ShapeError):
        unroll_sequence("dense", dense_params(1, 1, fill=0.0), np.zeros((0, 1)))


def test_unroll_batched_equals_individual(rng):
    p = conv_params(2, 1, rng=rng)
    x = rng.random((3, 2, 4, 4, 1))
    batched, _ = unroll_sequence("conv", p, x)
    for n in range(3):
        single, _ = unroll_sequence("conv", p, x[n])
        np.testing.assert_allclose(batched[-1].h[n], single[-1].h, rtol=1e-12)


def test_unroll_respects_initial_state(rng):
    p = dense_params(2, 1, rng)
    x = rng.standard_normal((2, 1))
    init = state(rng.standard_normal(2), rng.standard_normal(2))
    states, _ = unroll_sequence("dense", p, x, initial=init)
    s1, _ = lstm_step(p, init, x[0])
    np.testing.assert_allclose(states[1].h, s1.h)


# -- bptt -------------------------------------------------------------------------

def test_zero_upstream_gradient(rng):
    p = dense_params(3, 2, rng)
    x = rng.standard_normal((3, 2))
    states, caches = unroll_sequence("dense", p, x)
    grads, gx = bptt_backward(p, caches, states, x, np.zeros(3))
    for n in param_names(grads):
        np.testing.assert_array_equal(getattr(grads, n), 0.0)
    np.testing.assert_array_equal(gx, 0.0)


def test_cache_length_mismatch(rng):
    p = dense_params(1, 1, rng)
    x = rng.standard_normal((3, 1))
    states, caches = unroll_sequence("dense", p, x)
    with pytest.raises(ShapeError):
        bptt_backward(p, caches[:2], states, x, np.ones(1))


def _fd_check(cell, p, x, w):
    def loss():
        states, _ = unroll_sequence(cell, p, x)
        return float(np.sum(w * states[-1].h))

    states, caches = unroll_sequence(cell, p, x)
    grads, gx = bptt_backward(p, caches, states, x, w)
    worst = max_rel_error(gx, central_difference(loss, x))
    for n in param_names(p):
        worst = max(worst, max_rel_error(getattr(grads, n), central_difference(loss, getattr(p, n))))
    return worst


def test_scalar_lstm_single_step_fd(rng):
    p = dense_params(1, 1, rng)
    assert _fd_check("dense", p, rng.standard_normal((1, 1)), np.array([1.0])) <= 1e-6


@pytest.mark.parametrize("T", [1, 2, 3])
@pytest.mark.parametrize("seed", range(10))
def test_bptt_dense_matches_finite_differences(T, seed):
    r = np.random.default_rng(seed)
    p = dense_params(3, 2, r, scale=0.7)
    x = r.standard_normal((T, 2))
    assert _fd_check("dense", p, x, r.standard_normal(3)) <= 1e-5


@pytest.mark.parametrize("T", [1, 2, 3])
@pytest.mark.parametrize("seed", range(10))
def test_bptt_conv_matches_finite_differences(T, seed):
    r = np.random.default_rng(seed)
    p = conv_params(2, 1, rng=r, scale=0.4)
    x = r.random((T, 3, 4, 1))
    assert _fd_check("conv", p, x, r.standard_normal((3, 4, 2))) <= 1e-5


def test_bptt_batched_sums_per_sample(rng):
    p = conv_params(2, 1, rng=rng)
    x = rng.random((2, 2, 3, 3, 1))
    w = rng.standard_normal((2, 3, 3, 2))
    states, caches = unroll_sequence("conv", p, x)
    total, _ = bptt_backward(p, caches, states, x, w)
    acc = {n: 0 for n in param_names(p)}
    for n in range(2):
        s, c = unroll_sequence("conv", p, x[n])
        g, _ = bptt_backward(p, c, s, x[n], w[n])
        for k in acc:
            acc[k] = acc[k] + getattr(g, k)
    for k in acc:
        np.testing.assert_allclose(getattr(total, k), acc[k], rtol=1e-10, atol=1e-14)
