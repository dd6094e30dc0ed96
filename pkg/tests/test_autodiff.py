"""Forward and gradient checks for the reverse-mode tensor engine."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from freqdyn import ConfigurationError
from freqdyn import autodiff as ad
from freqdyn.autodiff import Tensor, backward
from freqdyn.gradcheck import finite_diff_check

from oracles import conv2d_naive

GRAD_TOL = 1e-4


def rand(shape, seed, scale=1.0, offset=0.0):
    rng = np.random.default_rng(seed)
    return rng.standard_normal(shape) * scale + offset


# -- convolution against the nested-loop oracle ------------------------------

@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("stride,dilation", [
    ((1, 1), (1, 1)),
    ((1, 1), (1, 2)),
    ((1, 1), (2, 3)),
    ((2, 1), (1, 1)),
    ((2, 2), (1, 2)),
])
def test_conv2d_matches_naive(seed, stride, dilation):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((2, 3, 7, 9))
    w = rng.standard_normal((4, 3, 3, 3))
    b = rng.standard_normal(4)
    got = ad.conv2d(Tensor(x), Tensor(w), Tensor(b),
                    stride=stride, dilation=dilation).data
    want = conv2d_naive(x, w, b, stride=stride, dilation=dilation)
    assert got.shape == want.shape
    np.testing.assert_allclose(got, want, atol=1e-12)
    assert np.all(np.isfinite(got))


def test_conv2d_dilated_row_example():
    # One row along frequency, ones kernel at frequency dilation 2: the
    # center output tap sees both endpoints of [1, 0, 0, 0, 1].
    x = np.array([1.0, 0.0, 0.0, 0.0, 1.0]).reshape(1, 1, 1, 5)
    w = np.ones((1, 1, 1, 3))
    want = conv2d_naive(x, w, dilation=(1, 2))
    got = ad.conv2d(Tensor(x), Tensor(w), dilation=(1, 2)).data
    np.testing.assert_allclose(got, want, atol=1e-15)
    assert got.shape == (1, 1, 1, 5)
    assert got[0, 0, 0, 2] == 2.0


def test_conv2d_same_padding_puts_extra_cell_last():
    # Even kernel along frequency: total pad 1, so the single pad cell goes
    # at the end of the axis.
    x = np.array([1.0, 2.0, 3.0]).reshape(1, 1, 1, 3)
    w = np.ones((1, 1, 1, 2))
    got = ad.conv2d(Tensor(x), Tensor(w)).data
    np.testing.assert_allclose(got.ravel(), [3.0, 5.0, 3.0])


def test_conv2d_shape_errors():
    x = Tensor(np.zeros((1, 3, 4, 4)))
    w = Tensor(np.zeros((2, 5, 3, 3)))
    with pytest.raises(ConfigurationError, match=r"\(1, 3, 4, 4\)"):
        ad.conv2d(x, w)
    with pytest.raises(ConfigurationError, match="empty"):
        ad.conv2d(Tensor(np.zeros((1, 1, 2, 2))),
                  Tensor(np.zeros((1, 1, 3, 3))), padding=0)


def test_conv2d_stride_uses_floor_formula():
    x = Tensor(np.zeros((1, 1, 7, 5)))
    w = Tensor(np.zeros((1, 1, 3, 3)))
    out = ad.conv2d(x, w, stride=(2, 2), padding=0)
    assert out.shape == (1, 1, 3, 2)


# -- pooling, normalization, activations -------------------------------------

def test_avg_pool_preserves_mean():
    x = rand((2, 3, 6, 8), seed=0)
    out = ad.avg_pool2d(Tensor(x), (2, 2)).data
    assert out.shape == (2, 3, 3, 4)
    np.testing.assert_allclose(out.mean(), x.mean(), atol=1e-12)


def test_avg_pool_divisibility_error():
    with pytest.raises(ConfigurationError, match="divide"):
        ad.avg_pool2d(Tensor(np.zeros((1, 1, 5, 4))), (2, 2))


def test_batch_norm_constant_input_gives_beta():
    x = Tensor(np.full((2, 3, 4, 5), 7.25))
    gamma = Tensor(np.ones(3))
    beta = Tensor(np.zeros(3))
    out = ad.batch_norm2d(x, gamma, beta, training=True)
    assert np.all(out.data == 0.0)
    out5 = ad.batch_norm2d(x, gamma, Tensor(np.full(3, 5.0)), training=True)
    assert np.all(out5.data == 5.0)


def test_batch_norm_standardized_input_roundtrip():
    x = rand((4, 2, 8, 8), seed=1)
    x = (x - x.mean(axis=(0, 2, 3), keepdims=True)) / x.std(
        axis=(0, 2, 3), keepdims=True)
    out = ad.batch_norm2d(Tensor(x), Tensor(np.ones(2)), Tensor(np.zeros(2)),
                          training=True)
    np.testing.assert_allclose(out.data, x, atol=1e-3)


def test_batch_norm_running_stats_and_eval_mode():
    rm = np.zeros(2)
    rv = np.ones(2)
    x = rand((4, 2, 4, 4), seed=2, offset=3.0)
    ad.batch_norm2d(Tensor(x), Tensor(np.ones(2)), Tensor(np.zeros(2)),
                    running_mean=rm, running_var=rv, training=True)
    expected_rm = 0.1 * x.mean(axis=(0, 2, 3))
    np.testing.assert_allclose(rm, expected_rm, atol=1e-12)
    out = ad.batch_norm2d(Tensor(x), Tensor(np.ones(2)), Tensor(np.zeros(2)),
                          running_mean=rm, running_var=rv, training=False)
    want = (x - rm.reshape(1, 2, 1, 1)) / np.sqrt(rv + 1e-5).reshape(1, 2, 1, 1)
    np.testing.assert_allclose(out.data, want, atol=1e-12)
    with pytest.raises(ConfigurationError, match="running"):
        ad.batch_norm2d(Tensor(x), Tensor(np.ones(2)), Tensor(np.zeros(2)),
                        training=False)


def test_softmax_known_values_and_temperature():
    out = ad.softmax(Tensor(np.array([np.log(2.0), 0.0])), axis=0)
    np.testing.assert_allclose(out.data, [2 / 3, 1 / 3], atol=1e-12)
    hot = ad.softmax(Tensor(np.array([5.0, 1.0, -2.0])), axis=0, tau=1e6)
    np.testing.assert_allclose(hot.data, np.full(3, 1 / 3), atol=1e-5)
    with pytest.raises(ConfigurationError, match="temperature"):
        ad.softmax(Tensor(np.zeros(3)), axis=0, tau=0.0)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-30, 30), min_size=1, max_size=8),
       st.floats(0.1, 50))
def test_softmax_normalizes(values, tau):
    out = ad.softmax(Tensor(np.array(values)), axis=0, tau=tau).data
    assert np.all(out >= 0)
    assert abs(out.sum() - 1.0) < 1e-9


def test_context_gate_zero_logits_halves_input():
    x = rand((2, 3, 4, 5), seed=3)
    out = ad.context_gate(Tensor(x), Tensor(np.zeros((3, 3))),
                          Tensor(np.zeros(3)))
    np.testing.assert_allclose(out.data, 0.5 * x, atol=1e-12)


def test_activation_dispatch():
    x = Tensor(np.array([-1.0, 2.0]))
    np.testing.assert_allclose(ad.activation(x, "relu").data, [0.0, 2.0])
    with pytest.raises(ConfigurationError, match="unknown activation"):
        ad.activation(x, "swish")
    with pytest.raises(ConfigurationError, match="gate"):
        ad.activation(x, "glu_context_gate")


def test_dropout_modes():
    x = Tensor(rand((3, 4), seed=4))
    rng = np.random.default_rng(0)
    assert ad.dropout(x, 0.0, rng) is x
    assert ad.dropout(x, 0.5, rng, training=False) is x
    out = ad.dropout(x, 0.5, np.random.default_rng(1), training=True).data
    kept = out != 0
    np.testing.assert_allclose(out[kept], 2.0 * x.data[kept])
    with pytest.raises(ConfigurationError, match="dropout"):
        ad.dropout(x, 1.0, rng)


# -- reverse sweep semantics --------------------------------------------------

def test_backward_requires_scalar():
    x = Tensor(np.zeros(3), requires_grad=True)
    with pytest.raises(ConfigurationError, match="scalar"):
        backward(x + 1.0)


def test_backward_accumulates_fanout_and_rezeros():
    x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    loss = (x + x).sum()
    backward(loss)
    np.testing.assert_allclose(x.grad, [2.0, 2.0])
    backward(loss)  # a second sweep starts from zeroed grads
    np.testing.assert_allclose(x.grad, [2.0, 2.0])


def test_softmax_then_sum_has_zero_gradient():
    x = Tensor(rand(5, seed=5), requires_grad=True)
    backward(ad.softmax(x, axis=0).sum())
    np.testing.assert_allclose(x.grad, np.zeros(5), atol=1e-12)


def test_eval_graph_is_pruned():
    x = Tensor(rand((1, 2, 4, 4), seed=6))
    out = ad.conv2d(x, Tensor(rand((2, 2, 3, 3), seed=7)))
    assert not out.requires_grad and out._parents == ()


# -- finite-difference checker -----------------------------------------------

def test_finite_diff_linear_is_tight():
    w = rand(6, seed=8)
    err = finite_diff_check(lambda t: (t * Tensor(w)).sum(), rand(6, seed=9))
    assert err < 1e-10


def test_finite_diff_quadratic():
    err = finite_diff_check(lambda t: (t * t).sum(), rand(6, seed=10))
    assert err < 1e-6


def test_finite_diff_constant_is_zero():
    err = finite_diff_check(lambda t: (t * 0.0).sum(), rand(4, seed=11))
    assert err == 0.0


OP_CASES = {
    "add": lambda t: (t + Tensor(rand(t.shape, 99))).sum(),
    "mul": lambda t: (t * Tensor(rand(t.shape, 98))).sum(),
    "power": lambda t: ((t * t + 1.0) ** 1.5).sum(),
    "div": lambda t: (Tensor(rand(t.shape, 97)) / (t * t + 2.0)).sum(),
    "exp": lambda t: ad.exp(t * 0.5).sum(),
    "log": lambda t: ad.log(t * t + 1.5).sum(),
    "tanh": lambda t: ad.tanh(t).sum(),
    "sigmoid": lambda t: ad.sigmoid(t).mean(),
    "relu": lambda t: ad.relu(t + 0.01).sum(),
    "softmax": lambda t: (ad.softmax(t, axis=0, tau=2.0) *
                          Tensor(rand(t.shape, 96))).sum(),
    "mean_axis": lambda t: (t.reshape(2, 4).mean(axis=1) *
                            Tensor(rand(2, 95))).sum(),
    "sum_keepdims": lambda t: (t.reshape(2, 4).sum(axis=0, keepdims=True)
                               ** 2.0).sum(),
    "getitem": lambda t: (t[2:6] * Tensor(rand(4, 94))).sum(),
    "transpose": lambda t: (t.reshape(2, 4).transpose(1, 0) *
                            Tensor(rand((4, 2), 93))).sum(),
    "concat": lambda t: ad.concat([t[:3], t[3:] * 2.0], axis=0).sum(),
    "clip": lambda t: (ad.clip(t, -0.9, 0.9) ** 2.0).sum(),
}


@pytest.mark.parametrize("name", sorted(OP_CASES))
def test_gradcheck_elementwise_ops(name):
    point = rand(8, seed=abs(hash(name)) % 1000, scale=0.7)
    point = np.where(np.abs(np.abs(point) - 0.9) < 1e-3, 0.5, point)
    assert finite_diff_check(OP_CASES[name], point) < GRAD_TOL


def test_gradcheck_matmul():
    b = Tensor(rand((3, 2), seed=12))

    def f(t):
        return (t.reshape(4, 3) @ b).sum()

    assert finite_diff_check(f, rand(12, seed=13)) < GRAD_TOL


def test_gradcheck_conv2d_dilated_strided():
    w = Tensor(rand((2, 3, 3, 3), seed=14, scale=0.5))

    def wrt_input(t):
        return (ad.conv2d(t.reshape(1, 3, 5, 6), w, dilation=(1, 2),
                          stride=(2, 1)) ** 2.0).sum()

    assert finite_diff_check(wrt_input, rand(90, seed=15)) < GRAD_TOL

    x = Tensor(rand((1, 3, 5, 6), seed=16))

    def wrt_weight(t):
        return (ad.conv2d(x, t.reshape(2, 3, 3, 3), dilation=(1, 2)) *
                Tensor(rand((1, 2, 5, 6), 17))).sum()

    assert finite_diff_check(wrt_weight, rand(54, seed=18)) < GRAD_TOL


def test_gradcheck_batch_norm_train_and_eval():
    gamma = Tensor(rand(2, seed=19, offset=1.0))
    beta = Tensor(rand(2, seed=20))
    # Weight the output elementwise so the loss is not (nearly) invariant to
    # x, which a plain sum of squares would be after standardization.
    coeff = Tensor(rand((2, 2, 3, 2), seed=28))

    def train_mode(t):
        out = ad.batch_norm2d(t.reshape(2, 2, 3, 2), gamma, beta,
                              training=True)
        return ((out * coeff) ** 2.0).sum() + (out * coeff).sum()

    assert finite_diff_check(train_mode, rand(24, seed=21)) < GRAD_TOL

    def wrt_gamma(t):
        x = Tensor(rand((2, 2, 3, 2), seed=29))
        out = ad.batch_norm2d(x, t, beta, training=True)
        return ((out * coeff) ** 2.0).sum()

    assert finite_diff_check(wrt_gamma, rand(2, seed=30)) < GRAD_TOL

    rm, rv = np.array([0.3, -0.2]), np.array([1.5, 0.8])

    def eval_mode(t):
        return (ad.batch_norm2d(t.reshape(2, 2, 3, 2), gamma, beta,
                                running_mean=rm, running_var=rv,
                                training=False) ** 2.0).sum()

    assert finite_diff_check(eval_mode, rand(24, seed=22)) < GRAD_TOL


def test_gradcheck_avg_pool():
    def f(t):
        return (ad.avg_pool2d(t.reshape(1, 2, 4, 4), (2, 2)) ** 2.0).sum()

    assert finite_diff_check(f, rand(32, seed=23)) < GRAD_TOL


def test_gradcheck_context_gate():
    w = Tensor(rand((3, 3), seed=24, scale=0.5))
    b = Tensor(rand(3, seed=25))

    def f(t):
        return (ad.context_gate(t.reshape(1, 3, 2, 2), w, b) ** 2.0).sum()

    assert finite_diff_check(f, rand(12, seed=26)) < GRAD_TOL


def test_gradcheck_dropout_fixed_mask():
    def f(t):
        return (ad.dropout(t, 0.5, np.random.default_rng(7)) ** 2.0).sum()

    assert finite_diff_check(f, rand(10, seed=27)) < GRAD_TOL
