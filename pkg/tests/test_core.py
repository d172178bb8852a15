import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cgtrace.core import (
    Adam,
    AdamState,
    ConvSpec,
    DimensionError,
    NumericError,
    Tensor,
    adam_step,
    avg_pool2d,
    batch_norm,
    conv2d,
    cross_entropy,
    cross_entropy_with_logits,
    linear,
    relu6,
    sigmoid,
    softmax,
)
from cgtrace.core.gradcheck import check_gradients


# --- brute-force oracles ----------------------------------------------------

def conv_oracle(x, w, b, stride, pad):
    n, cin, h, wd = x.shape
    cout, _, kh, kw = w.shape
    xp = np.zeros((n, cin, h + 2 * pad, wd + 2 * pad))
    xp[:, :, pad:pad + h, pad:pad + wd] = x
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wd + 2 * pad - kw) // stride + 1
    out = np.zeros((n, cout, ho, wo))
    for a in range(n):
        for o in range(cout):
            for i in range(ho):
                for j in range(wo):
                    acc = b[o]
                    for c in range(cin):
                        for u in range(kh):
                            for v in range(kw):
                                acc += xp[a, c, i * stride + u, j * stride + v] * w[o, c, u, v]
                    out[a, o, i, j] = acc
    return out


def pool_oracle(x, window, stride):
    n, c, h, w = x.shape
    ho, wo = (h - window) // stride + 1, (w - window) // stride + 1
    out = np.zeros((n, c, ho, wo))
    for a in range(n):
        for k in range(c):
            for i in range(ho):
                for j in range(wo):
                    vals = [x[a, k, i * stride + u, j * stride + v]
                            for u in range(window) for v in range(window)]
                    out[a, k, i, j] = sum(vals) / len(vals)
    return out


def matmul_oracle(x, w, b):
    n, d = x.shape
    k = w.shape[0]
    out = np.zeros((n, k))
    for i in range(n):
        for j in range(k):
            out[i, j] = b[j] + sum(x[i, t] * w[j, t] for t in range(d))
    return out


# --- conv2d -----------------------------------------------------------------

def test_conv_identity_kernel():
    x = np.arange(9.0).reshape(1, 1, 3, 3)
    out = conv2d(Tensor(x), Tensor(np.ones((1, 1, 1, 1))), Tensor(np.zeros(1)),
                 ConvSpec(1, 1, 1, 1))
    np.testing.assert_array_equal(out.data, x)


def test_conv_sum_case():
    x = np.array([[[[1.0, 2], [3, 4]]]])
    out = conv2d(Tensor(x), Tensor(np.ones((1, 1, 2, 2))), Tensor(np.zeros(1)),
                 ConvSpec(1, 1, 2, 2))
    assert out.shape == (1, 1, 1, 1)
    assert out.data[0, 0, 0, 0] == 10


def test_conv_matches_loop_oracle_5x5():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((2, 3, 8, 8))
    w = rng.standard_normal((4, 3, 5, 5))
    b = rng.standard_normal(4)
    out = conv2d(Tensor(x), Tensor(w), Tensor(b), ConvSpec(3, 4, 5, 5, 1, 2))
    np.testing.assert_allclose(out.data, conv_oracle(x, w, b, 1, 2), rtol=0, atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(
    cin=st.integers(1, 4), cout=st.integers(1, 4), k=st.integers(1, 5),
    stride=st.integers(1, 3), pad=st.integers(0, 2), h=st.integers(5, 8),
    w=st.integers(5, 8), seed=st.integers(0, 10_000),
)
def test_conv_oracle_property(cin, cout, k, stride, pad, h, w, seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((1, cin, h, w))
    wt = rng.standard_normal((cout, cin, k, k))
    b = rng.standard_normal(cout)
    out = conv2d(Tensor(x), Tensor(wt), Tensor(b), ConvSpec(cin, cout, k, k, stride, pad))
    np.testing.assert_allclose(out.data, conv_oracle(x, wt, b, stride, pad), atol=1e-12)


def test_conv_shape_mismatch():
    with pytest.raises(DimensionError):
        conv2d(Tensor(np.zeros((1, 2, 4, 4))), Tensor(np.zeros((1, 3, 3, 3))), None,
               ConvSpec(3, 1, 3, 3))


def test_convspec_validation():
    with pytest.raises(ValueError):
        ConvSpec(1, 1, 0, 3)
    with pytest.raises(ValueError):
        ConvSpec(1, 1, 3, 3, stride=0)
    assert ConvSpec(3, 64, 3, 3, 2, 1).output_size(256, 256) == (128, 128)


# --- pooling ----------------------------------------------------------------

def test_pool_constant():
    x = np.full((1, 2, 6, 6), 7.0)
    np.testing.assert_array_equal(avg_pool2d(Tensor(x), 3, 3).data, 7.0)
    np.testing.assert_array_equal(avg_pool2d(Tensor(x), 2).data, 7.0)


def test_pool_mean_case():
    x = np.array([[[[1.0, 2], [3, 4]]]])
    assert avg_pool2d(Tensor(x), 2).data.item() == 2.5


@pytest.mark.parametrize("window,stride", [(2, 2), (3, 1), (2, 3), (4, 4)])
def test_pool_matches_window_oracle(window, stride):
    x = np.random.default_rng(3).standard_normal((1, 2, 8, 8))
    np.testing.assert_allclose(avg_pool2d(Tensor(x), window, stride).data,
                               pool_oracle(x, window, stride), atol=1e-12)


def test_pool_window_too_large():
    with pytest.raises(DimensionError):
        avg_pool2d(Tensor(np.zeros((1, 1, 2, 2))), 3)


# --- pointwise --------------------------------------------------------------

def test_relu6_values():
    out = relu6(Tensor([7.0, -3.0, 3.5, 0.0, 6.0])).data
    np.testing.assert_array_equal(out, [6, 0, 3.5, 0, 6])


def test_relu6_kink_subgradient_is_zero():
    x = Tensor([0.0, 6.0, 2.0], requires_grad=True)
    relu6(x).sum().backward()
    np.testing.assert_array_equal(x.grad, [0, 0, 1])


def test_sigmoid_values():
    assert sigmoid(Tensor([0.0])).data[0] == 0.5
    assert abs(sigmoid(Tensor([100.0])).data[0] - 1.0) < 1e-15
    out = sigmoid(Tensor([-700.0, 700.0])).data
    assert np.all(np.isfinite(out))


def test_sigmoid_symmetry():
    x = np.random.default_rng(0).uniform(-30, 30, 200)
    s = sigmoid(Tensor(x)).data + sigmoid(Tensor(-x)).data
    np.testing.assert_allclose(s, 1.0, atol=1e-15)


def test_softmax_cases():
    np.testing.assert_allclose(softmax(Tensor([[0.0, 0.0]])).data, [[0.5, 0.5]])
    np.testing.assert_allclose(softmax(Tensor([[np.log(2), 0.0]])).data, [[2 / 3, 1 / 3]],
                               atol=1e-15)
    np.testing.assert_array_equal(softmax(Tensor([[1000.0, 0.0]])).data, [[1.0, 0.0]])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=2, max_size=6), st.floats(-100, 100))
def test_softmax_rows_and_shift(row, shift):
    z = np.array([row, row[::-1]])
    p = softmax(Tensor(z)).data
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)
    np.testing.assert_allclose(softmax(Tensor(z + shift)).data, p, atol=1e-12)


def test_fully_connected_cases():
    x = np.random.default_rng(0).standard_normal((3, 4))
    np.testing.assert_array_equal(
        linear(Tensor(x), Tensor(np.eye(4)), Tensor(np.zeros(4))).data, x)
    b = np.array([1.0, -2.0])
    np.testing.assert_array_equal(
        linear(Tensor(x), Tensor(np.zeros((2, 4))), Tensor(b)).data, np.tile(b, (3, 1)))


def test_fully_connected_oracle():
    rng = np.random.default_rng(5)
    x, w, b = rng.standard_normal((4, 6)), rng.standard_normal((3, 6)), rng.standard_normal(3)
    np.testing.assert_allclose(linear(Tensor(x), Tensor(w), Tensor(b)).data,
                               matmul_oracle(x, w, b), atol=1e-12)


def test_fully_connected_mismatch():
    with pytest.raises(DimensionError):
        linear(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 4))))


def test_cross_entropy_cases():
    assert cross_entropy(Tensor([[0.0, 1.0]]), [1]).data == 0.0
    assert abs(float(cross_entropy(Tensor([[0.5, 0.5]]), [0]).data) - np.log(2)) < 1e-15
    rng = np.random.default_rng(2)
    p = softmax(Tensor(rng.standard_normal((5, 3)))).data
    labels = rng.integers(0, 3, 5)
    expected = np.mean([-np.log(p[i, labels[i]]) for i in range(5)])
    assert abs(float(cross_entropy(Tensor(p), labels).data) - expected) < 1e-14
    with pytest.raises(ValueError):
        cross_entropy(Tensor(p), [0, 1, 2, 3, 0])


def test_fused_cross_entropy_matches_two_step():
    rng = np.random.default_rng(4)
    z = rng.standard_normal((6, 2))
    labels = rng.integers(0, 2, 6)
    two_step = cross_entropy(softmax(Tensor(z)), labels).data
    fused = cross_entropy_with_logits(Tensor(z), labels).data
    assert abs(float(two_step) - float(fused)) < 1e-14


def test_non_finite_raises():
    with pytest.raises(NumericError), np.errstate(divide="ignore"):
        Tensor([1.0]) / Tensor([0.0])


# --- batch norm -------------------------------------------------------------

def _bn(x, gamma, beta, training=True, eps=1e-5):
    c = x.shape[1]
    return batch_norm(Tensor(x), Tensor(gamma), Tensor(beta), np.zeros(c), np.ones(c), training,
                      eps=eps)


def test_bn_normalizes_batch_statistics():
    x = np.random.default_rng(0).standard_normal((4, 3, 4, 4)) * 3 + 2
    # the eps-free statistics at the stated tolerance
    out = _bn(x, np.ones(3), np.zeros(3), eps=1e-9).data
    assert np.all(np.abs(out.mean(axis=(0, 2, 3))) < 1e-9)
    assert np.all(np.abs(out.var(axis=(0, 2, 3)) - 1) < 1e-6)
    # default eps shrinks the variance by exactly var / (var + eps)
    out = _bn(x, np.ones(3), np.zeros(3)).data
    v_in = x.var(axis=(0, 2, 3))
    np.testing.assert_allclose(out.var(axis=(0, 2, 3)), v_in / (v_in + 1e-5), rtol=1e-12)


def test_bn_already_normalized_is_identity():
    x = np.random.default_rng(1).standard_normal((8, 2, 8, 8))
    x = (x - x.mean(axis=(0, 2, 3), keepdims=True)) / x.std(axis=(0, 2, 3), keepdims=True)
    np.testing.assert_allclose(_bn(x, np.ones(2), np.zeros(2), eps=1e-9).data, x, atol=1e-6)
    np.testing.assert_allclose(_bn(x, np.ones(2), np.zeros(2)).data, x / np.sqrt(1 + 1e-5),
                               atol=1e-12)


def test_bn_zero_gamma_gives_beta():
    x = np.random.default_rng(2).standard_normal((2, 3, 4, 4))
    beta = np.array([0.5, -1.0, 2.0])
    out = _bn(x, np.zeros(3), beta).data
    np.testing.assert_array_equal(out, np.broadcast_to(beta[None, :, None, None], x.shape))


def test_bn_constant_channel_no_division_by_zero():
    out = _bn(np.ones((2, 1, 3, 3)), np.ones(1), np.zeros(1)).data
    np.testing.assert_array_equal(out, 0.0)


def test_bn_running_stats_and_eval():
    x = np.random.default_rng(3).standard_normal((4, 2, 3, 3)) + 5
    rm, rv = np.zeros(2), np.ones(2)
    batch_norm(Tensor(x), Tensor(np.ones(2)), Tensor(np.zeros(2)), rm, rv, True)
    np.testing.assert_allclose(rm, 0.1 * x.mean(axis=(0, 2, 3)))
    m = x.shape[0] * 9
    np.testing.assert_allclose(rv, 0.9 + 0.1 * x.var(axis=(0, 2, 3)) * m / (m - 1))
    out = batch_norm(Tensor(x), Tensor(np.ones(2)), Tensor(np.zeros(2)), rm, rv, False).data
    expected = (x - rm[None, :, None, None]) / np.sqrt(rv[None, :, None, None] + 1e-5)
    np.testing.assert_allclose(out, expected)


# --- autograd ---------------------------------------------------------------

def test_backward_sum_and_square():
    x = Tensor(np.random.default_rng(0).standard_normal(5), requires_grad=True)
    x.sum().backward()
    np.testing.assert_array_equal(x.grad, np.ones(5))
    x.grad = None
    (x * x).sum().backward()
    np.testing.assert_allclose(x.grad, 2 * x.data)


def test_backward_requires_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(RuntimeError):
        (x * 2).backward()


def _away_from_kinks(a, margin=1e-3):
    a = np.where(np.abs(a) < margin, margin * 2, a)
    return np.where(np.abs(a - 6) < margin, 6 + margin * 2, a)


@pytest.mark.parametrize("stride,pad,k", [(1, 2, 5), (2, 1, 3), (1, 0, 1), (2, 3, 7)])
def test_conv_gradients(stride, pad, k):
    rng = np.random.default_rng(7)
    x = Tensor(rng.standard_normal((2, 3, 8, 8)), requires_grad=True)
    w = Tensor(rng.standard_normal((2, 3, k, k)), requires_grad=True)
    b = Tensor(rng.standard_normal(2), requires_grad=True)
    r = rng.standard_normal(conv2d(x, w, b, ConvSpec(3, 2, k, k, stride, pad)).shape)
    f = lambda: (conv2d(x, w, b, ConvSpec(3, 2, k, k, stride, pad)) * Tensor(r)).sum()
    assert check_gradients(f, [x, w, b]) < 1e-4


@pytest.mark.parametrize("window,stride", [(2, 2), (3, 2)])
def test_pool_gradients(window, stride):
    rng = np.random.default_rng(8)
    x = Tensor(rng.standard_normal((1, 2, 8, 8)), requires_grad=True)
    r = rng.standard_normal(avg_pool2d(x, window, stride).shape)
    assert check_gradients(lambda: (avg_pool2d(x, window, stride) * Tensor(r)).sum(), [x]) < 1e-4


def test_pointwise_gradients():
    rng = np.random.default_rng(9)
    x = Tensor(_away_from_kinks(rng.uniform(-2, 8, (3, 4))), requires_grad=True)
    r = Tensor(rng.standard_normal((3, 4)))
    assert check_gradients(lambda: (relu6(x) * r).sum(), [x]) < 1e-4
    assert check_gradients(lambda: (sigmoid(x) * r).sum(), [x]) < 1e-4
    assert check_gradients(lambda: (softmax(x) * r).sum(), [x]) < 1e-4


def test_bn_gradients():
    rng = np.random.default_rng(10)
    x = Tensor(rng.standard_normal((3, 2, 4, 4)), requires_grad=True)
    g = Tensor(rng.standard_normal(2) + 1, requires_grad=True)
    b = Tensor(rng.standard_normal(2), requires_grad=True)
    r = Tensor(rng.standard_normal((3, 2, 4, 4)))
    rm, rv = np.zeros(2), np.ones(2)
    f = lambda: (batch_norm(x, g, b, rm, rv, True) * r).sum()
    assert check_gradients(f, [x, g, b]) < 1e-4


def test_linear_and_ce_gradients():
    rng = np.random.default_rng(11)
    x = Tensor(rng.standard_normal((4, 5)), requires_grad=True)
    w = Tensor(rng.standard_normal((3, 5)), requires_grad=True)
    b = Tensor(rng.standard_normal(3), requires_grad=True)
    labels = [0, 2, 1, 2]
    assert check_gradients(lambda: cross_entropy(softmax(linear(x, w, b)), labels), [x, w, b]) < 1e-4
    assert check_gradients(lambda: cross_entropy_with_logits(linear(x, w, b), labels), [x, w, b]) < 1e-4


def test_composite_pipeline_gradient():
    rng = np.random.default_rng(12)
    x = Tensor(rng.standard_normal((2, 3, 8, 8)), requires_grad=True)
    w = Tensor(rng.standard_normal((4, 3, 5, 5)) * 0.2, requires_grad=True)
    cb = Tensor(rng.standard_normal(4) * 0.1, requires_grad=True)
    gamma = Tensor(np.ones(4) * 1.5, requires_grad=True)
    beta = Tensor(np.full(4, 0.5), requires_grad=True)
    fw = Tensor(rng.standard_normal((2, 64)) * 0.3, requires_grad=True)
    fb = Tensor(np.zeros(2), requires_grad=True)
    rm, rv = np.zeros(4), np.ones(4)

    def f():
        h = conv2d(x, w, cb, ConvSpec(3, 4, 5, 5, 1, 2))
        h = batch_norm(h, gamma, beta, rm, rv, True)
        h = avg_pool2d(relu6(h), 2)
        return cross_entropy(softmax(linear(h.reshape(2, 64), fw, fb)), [0, 1])

    assert check_gradients(f, [x, w, cb, gamma, beta, fw, fb]) < 1e-4


# --- Adam -------------------------------------------------------------------

def test_adam_zero_gradient_keeps_params():
    p = np.array([1.0, -2.0])
    state = AdamState()
    adam_step([p], [np.zeros(2)], state)
    np.testing.assert_array_equal(p, [1.0, -2.0])
    assert state.step_count == 1


def test_adam_single_step_closed_form():
    p = np.array([0.5])
    state = AdamState(lr=0.0008)
    adam_step([p], [np.array([1.0])], state)
    m_hat = (0.1 * 1.0) / (1 - 0.9)
    v_hat = (0.001 * 1.0) / (1 - 0.999)
    assert abs(p[0] - (0.5 - 0.0008 * m_hat / (np.sqrt(v_hat) + 1e-8))) < 1e-15


def test_adam_constant_gradient_monotone():
    t = Tensor(np.array([1.0, 1.0]), requires_grad=True)
    opt = Adam([t], lr=0.01)
    history = []
    for _ in range(50):
        t.grad = np.array([2.0, -3.0])
        opt.step()
        history.append(t.data.copy())
    h = np.array(history)
    assert np.all(np.diff(h[:, 0]) < 0)
    assert np.all(np.diff(h[:, 1]) > 0)
