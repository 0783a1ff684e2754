import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tasif.core import (Adam, AdamState, NondeterministicLoss, ShapeError, Tensor, adam_step,
                        complex_modulate, grad_check, irfft, irfft_t, rfft, rfft_t)
from tasif.core import ops


def naive_dft(x):
    """O(n^2) DFT over axis 0, kept independent of the radix-2 code."""
    n = x.shape[0]
    t = np.arange(n)
    out = np.zeros((n // 2 + 1,) + x.shape[1:], dtype=complex)
    for k in range(n // 2 + 1):
        phase = np.exp(-2j * np.pi * k * t / n).reshape((n,) + (1,) * (x.ndim - 1))
        out[k] = (x * phase).sum(axis=0)
    return out


def param(rng, *shape):
    return Tensor(rng.standard_normal(shape), requires_grad=True)


# -- matmul ---------------------------------------------------------------

def test_matmul_identity_and_small_case():
    a = Tensor([[1.0, 0.0], [0.0, 1.0]])
    b = Tensor([[3.0, 4.0], [5.0, 6.0]])
    np.testing.assert_array_equal(ops.matmul(a, b).data, b.data)
    assert ops.matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]])).data.tolist() == [[11.0]]


def test_matmul_shape_error():
    with pytest.raises(ShapeError, match="inner dimensions"):
        ops.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_matmul_gradient_matches_finite_differences():
    rng = np.random.default_rng(0)
    a, b = param(rng, 4, 5), param(rng, 5, 3)
    w = rng.standard_normal((4, 3))
    report = grad_check(lambda: (ops.matmul(a, b) * w).sum(), {"a": a, "b": b}, tol=1e-6)
    assert report.passed, report.max_rel_error


# -- softmax ----------------------------------------------------------------

def test_softmax_closed_forms():
    np.testing.assert_allclose(ops.softmax(Tensor([[0.0, 0.0]])).data, [[0.5, 0.5]])
    np.testing.assert_allclose(ops.softmax(Tensor([[math.log(2), 0.0]])).data,
                               [[2 / 3, 1 / 3]], atol=1e-15)


def test_softmax_rows_sum_to_one_and_masking():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((3, 6)) * 5
    x[0, 2] -= 1e9
    p = ops.softmax(Tensor(x)).data
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-9)
    assert p[0, 2] < 1e-12
    assert ((p >= 0) & (p <= 1)).all()


def test_softmax_rejects_nan():
    with pytest.raises(ValueError, match="NaN"):
        ops.softmax(Tensor([[np.nan, 0.0]]))


# -- layer norm -------------------------------------------------------------

def test_layer_norm_closed_forms():
    one, zero = Tensor(np.ones(2)), Tensor(np.zeros(2))
    np.testing.assert_allclose(ops.layer_norm(Tensor([[1.0, 3.0]]), one, zero).data, [[-1.0, 1.0]],
                               atol=1e-12)
    np.testing.assert_array_equal(ops.layer_norm(Tensor([[5.0, 5.0]]), one, zero).data, [[0.0, 0.0]])


def test_layer_norm_statistics():
    rng = np.random.default_rng(2)
    y = ops.layer_norm(Tensor(rng.standard_normal((7, 9)) * 3 + 2), Tensor(np.ones(9)),
                       Tensor(np.zeros(9))).data
    assert np.abs(y.mean(axis=1)).max() < 1e-9
    assert np.abs(y.var(axis=1) - 1).max() < 1e-6


def test_layer_norm_gradient():
    rng = np.random.default_rng(3)
    x, g, b = param(rng, 2, 4), param(rng, 4), param(rng, 4)
    w = rng.standard_normal((2, 4))
    report = grad_check(lambda: (ops.layer_norm(x, g, b) * w).sum(), {"x": x, "g": g, "b": b},
                        tol=1e-5)
    assert report.passed, report.max_rel_error


# -- FFT ----------------------------------------------------------------------

def test_rfft_dc_and_impulse():
    spec = rfft(np.full((4, 1), 2.5))
    np.testing.assert_allclose(spec[:, 0], [10.0, 0.0, 0.0], atol=1e-15)
    np.testing.assert_allclose(rfft(np.array([[1.0], [0.0], [0.0], [0.0]]))[:, 0], [1, 1, 1])


def test_rfft_bin_count_and_real_edge_bins():
    spec = rfft(np.random.default_rng(4).standard_normal((16, 3)))
    assert spec.shape == (9, 3)
    assert np.all(spec[0].imag == 0) and np.all(spec[8].imag == 0)


@pytest.mark.parametrize("n", [1, 2, 4, 8, 16, 32, 64])
def test_rfft_matches_naive_dft(n):
    x = np.random.default_rng(n).standard_normal((n, 3))
    assert np.abs(rfft(x) - naive_dft(x)).max() < 1e-9


def test_irfft_special_cases():
    np.testing.assert_array_equal(irfft(np.zeros((5, 2), dtype=complex), 8), np.zeros((8, 2)))
    spec = np.zeros((5, 1), dtype=complex)
    spec[0] = 8
    np.testing.assert_allclose(irfft(spec, 8), np.ones((8, 1)), atol=1e-15)
    with pytest.raises(ShapeError):
        irfft(np.zeros((4, 1), dtype=complex), 8)


@settings(max_examples=40, deadline=None)
@given(log_n=st.integers(0, 8), d=st.integers(1, 4), seed=st.integers(0, 2**31 - 1))
def test_round_trip_property(log_n, d, seed):
    n = 2 ** log_n
    x = np.random.default_rng(seed).standard_normal((n, d))
    assert np.abs(irfft(rfft(x), n) - x).max() < 1e-10


def test_fft_along_middle_axis():
    x = np.random.default_rng(5).standard_normal((2, 8, 3))
    spec = rfft(x, axis=1)
    for b in range(2):
        assert np.abs(spec[b] - naive_dft(x[b])).max() < 1e-10
    assert np.abs(irfft(spec, 8, axis=1) - x).max() < 1e-12


def test_rejects_non_power_of_two():
    with pytest.raises(ShapeError):
        rfft(np.ones((6, 1)))


# -- complex modulation -------------------------------------------------------

def test_modulate_identity_and_zero():
    x = np.random.default_rng(6).standard_normal((8, 3))
    spec = rfft_t(Tensor(x))
    ones = Tensor(np.ones((5, 3), dtype=complex))
    np.testing.assert_array_equal(complex_modulate(spec, ones).data, spec.data)
    zeros = Tensor(np.zeros((5, 3), dtype=complex))
    assert not complex_modulate(spec, zeros).data.any()
    with pytest.raises(ShapeError):
        complex_modulate(spec, Tensor(np.ones((4, 3), dtype=complex)))


def test_spectral_filter_gradients():
    rng = np.random.default_rng(7)
    x = param(rng, 8, 3)
    re, im = param(rng, 5, 3), param(rng, 5, 3)
    w = rng.standard_normal((8, 3))

    def loss():
        filt = ops.complex_from_planes(re, im)
        out = irfft_t(complex_modulate(rfft_t(x), filt), 8)
        return (out * w).sum() + (out * out).sum()

    report = grad_check(loss, {"x": x, "re": re, "im": im})
    assert report.passed, report.max_rel_error


def test_real_filter_gradient():
    rng = np.random.default_rng(8)
    x, filt = param(rng, 2, 8, 3), param(rng, 5, 3)
    report = grad_check(lambda: (irfft_t(rfft_t(x, axis=1) * filt, 8, axis=1) * x).sum(),
                        {"x": x, "filt": filt})
    assert report.passed, report.max_rel_error


# -- dropout ------------------------------------------------------------------

def test_dropout_modes():
    x = Tensor(np.ones((4, 4)))
    assert ops.dropout(x, 0.0, True, np.random.default_rng(0)) is x
    assert ops.dropout(x, 0.5, False, None) is x
    with pytest.raises(ValueError):
        ops.dropout(x, 1.0, True, np.random.default_rng(0))


def test_dropout_survivor_fraction():
    out = ops.dropout(Tensor(np.ones(100_000)), 0.5, True, np.random.default_rng(9)).data
    assert abs((out != 0).mean() - 0.5) < 0.01
    np.testing.assert_array_equal(np.unique(out), [0.0, 2.0])


# -- elementwise op gradients ---------------------------------------------------

@pytest.mark.parametrize("name", ["exp", "sigmoid", "softplus", "tanh", "gelu", "square",
                                  "softmax", "log_softmax", "l2"])
def test_unary_gradients(name):
    rng = np.random.default_rng(10)
    x = param(rng, 3, 5)
    w = rng.standard_normal((3, 5))
    fn = {
        "exp": ops.exp, "sigmoid": ops.sigmoid, "softplus": ops.softplus, "tanh": ops.tanh,
        "gelu": ops.gelu, "square": ops.square, "softmax": ops.softmax,
        "log_softmax": ops.log_softmax, "l2": lambda t: ops.l2_normalize(t)[0],
    }[name]
    report = grad_check(lambda: (fn(x) * w).sum(), {"x": x})
    assert report.passed, report.max_rel_error


def test_log_div_sqrt_gradients():
    rng = np.random.default_rng(11)
    x = Tensor(rng.uniform(0.5, 2.0, (3, 4)), requires_grad=True)
    y = Tensor(rng.uniform(0.5, 2.0, (4,)), requires_grad=True)
    report = grad_check(lambda: (ops.log(x) + ops.sqrt(x) / y - x / 3.0).sum(), {"x": x, "y": y})
    assert report.passed, report.max_rel_error


def test_shape_op_gradients():
    rng = np.random.default_rng(12)
    x, y = param(rng, 2, 3, 4), param(rng, 2, 3, 4)
    w = rng.standard_normal((4, 2, 6))

    def loss():
        z = ops.concat([x, y], axis=2).transpose(2, 0, 1)          # 8 x 2 x 3
        z = ops.reshape(z, (4, 2, 6)) * w
        z = ops.pad_axis(z, 1, 2, axis=0)[1:3]
        s = ops.stack([x[:, 0], y[:, 1]], axis=0)
        idx = ops.getitem(x, (np.array([0, 0, 1]), np.array([2, 2, 0])))
        return z.sum() + (s * s).mean() + (idx * idx).sum() + ops.swapaxes(x, 0, 2).sum(axis=1).mean()

    report = grad_check(loss, {"x": x, "y": y})
    assert report.passed, report.max_rel_error


def test_embedding_padding_row_gets_no_gradient():
    table = Tensor(np.random.default_rng(13).standard_normal((5, 3)), requires_grad=True)
    idx = np.array([[0, 1, 1], [2, 0, 4]])
    ops.embedding(table, idx).sum().backward()
    np.testing.assert_array_equal(table.grad[0], 0.0)
    np.testing.assert_array_equal(table.grad[1], 2.0)
    with pytest.raises(IndexError):
        ops.embedding(table, np.array([5]))


def test_clip_gradient_zero_outside():
    x = Tensor(np.array([-40.0, 0.5, 40.0]), requires_grad=True)
    ops.clip(x, -30, 30).sum().backward()
    np.testing.assert_array_equal(x.grad, [0.0, 1.0, 0.0])


def test_requires_grad_false_never_receives_gradient():
    a = Tensor(np.ones(3), requires_grad=True)
    b = Tensor(np.ones(3))
    (a * b).sum().backward()
    assert b.grad is None and a.grad is not None


def test_shared_node_visited_once():
    x = Tensor(np.array([2.0]), requires_grad=True)
    y = x * x
    (y + y).sum().backward()
    np.testing.assert_array_equal(x.grad, [8.0])


def test_no_grad_records_nothing():
    x = Tensor(np.ones(2), requires_grad=True)
    with ops.no_grad():
        y = x * 2
    assert not y.requires_grad


# -- Adam -----------------------------------------------------------------------

def test_adam_zero_gradient_is_identity():
    p = {"w": np.array([1.0, -2.0])}
    state = AdamState(learning_rate=0.1)
    adam_step(p, {"w": np.zeros(2)}, state)
    np.testing.assert_array_equal(p["w"], [1.0, -2.0])
    np.testing.assert_array_equal(state.first_moment["w"], 0.0)
    assert state.step_count == 1


def test_adam_single_step_hand_recurrence():
    p = {"w": np.array([0.0])}
    adam_step(p, {"w": np.array([1.0])}, AdamState(learning_rate=0.1))
    assert p["w"][0] == pytest.approx(-0.1 / (1.0 + 1e-8), abs=1e-15)


def test_adam_constant_gradient_step_tends_to_lr_sign():
    p = {"w": np.array([0.0, 0.0])}
    state = AdamState(learning_rate=0.01)
    for _ in range(2000):
        before = p["w"].copy()
        adam_step(p, {"w": np.array([3.0, -0.2])}, state)
    np.testing.assert_allclose(p["w"] - before, [-0.01, 0.01], rtol=1e-6)
    assert state.step_count == 2000


def test_adam_skips_non_finite():
    p = {"a": np.array([1.0]), "b": np.array([1.0])}
    skipped = adam_step(p, {"a": np.array([np.inf]), "b": np.array([1.0])}, AdamState(learning_rate=0.1))
    assert skipped == ["a"] and p["a"][0] == 1.0 and p["b"][0] < 1.0


def test_adam_wrapper_and_decay_mask():
    t = Tensor(np.ones((2, 2)), requires_grad=True)
    t.grad = np.zeros((2, 2))
    mask = np.array([[0.0], [1.0]])
    opt = Adam({"t": t}, lr=0.1, weight_decay=0.5, decay_masks={"t": mask})
    opt.step()
    np.testing.assert_array_equal(t.data[0], [1.0, 1.0])
    assert (t.data[1] < 1.0).all()


# -- grad_check -----------------------------------------------------------------

def test_grad_check_quadratic_and_unused_parameter():
    rng = np.random.default_rng(14)
    theta, unused = param(rng, 10), param(rng, 3)
    loss = 0.5 * (theta * theta).sum()
    loss.backward()
    np.testing.assert_array_equal(theta.grad, theta.data)
    # central differences carry no truncation error on a quadratic, so a wide step
    # keeps roundoff below the 1e-9 bar
    report = grad_check(lambda: 0.5 * (theta * theta).sum(), {"theta": theta, "unused": unused},
                        eps=1e-3, tol=1e-9)
    assert report.max_rel_error["theta"] < 1e-9
    assert report.max_rel_error["unused"] == 0.0


def test_grad_check_rejects_nondeterministic_loss():
    theta = Tensor(np.ones(3), requires_grad=True)
    rng = np.random.default_rng(15)
    with pytest.raises(NondeterministicLoss):
        grad_check(lambda: (theta * rng.standard_normal(3)).sum(), {"theta": theta})
