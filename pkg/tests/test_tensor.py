import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mcapose import tensor as T
from mcapose.gradcheck import grad_check
from mcapose.tensor import GraphError, NonFiniteError, Tensor

from conftest import conv_loop, leaf


# -- forward oracles ----------------------------------------------------------

@pytest.mark.parametrize("k,stride,pad", [(1, 1, 0), (3, 1, 1), (3, 2, 1), (7, 2, 3), (5, 1, 0)])
def test_conv2d_matches_loop(rng, k, stride, pad):
    x = rng.normal(size=(2, 3, 9, 9))
    w = rng.normal(size=(4, 3, k, k))
    b = rng.normal(size=4)
    got = T.conv2d(Tensor(x), Tensor(w), Tensor(b), stride, pad).data
    np.testing.assert_allclose(got, conv_loop(x, w, b, stride, pad), rtol=0, atol=1e-12)


def test_conv2d_identity_and_zero_kernel(rng):
    x = rng.normal(size=(1, 2, 5, 5))
    ident = np.zeros((2, 2, 3, 3))
    ident[0, 0, 1, 1] = ident[1, 1, 1, 1] = 1.0
    assert np.array_equal(T.conv2d(Tensor(x), Tensor(ident), pad=1).data, x)
    out = T.conv2d(Tensor(x), Tensor(np.zeros((2, 2, 3, 3))), Tensor(np.array([0.5, -1.0])), pad=1).data
    assert np.all(out[:, 0] == 0.5) and np.all(out[:, 1] == -1.0)


def test_conv2d_rejects_channel_mismatch(rng):
    with pytest.raises(ValueError):
        T.conv2d(Tensor(rng.normal(size=(1, 2, 4, 4))), Tensor(rng.normal(size=(1, 3, 3, 3))))


def test_maxpool_loop_and_first_argmax_ties(rng):
    x = rng.normal(size=(2, 3, 6, 8))
    got = T.maxpool2x2(Tensor(x)).data
    want = np.array([[[[x[n, c, 2 * i : 2 * i + 2, 2 * j : 2 * j + 2].max() for j in range(4)] for i in range(3)]
                      for c in range(3)] for n in range(2)])
    assert np.array_equal(got, want)
    # a window of equal values routes the whole gradient to its top-left cell
    t = leaf(np.ones((1, 1, 2, 2)))
    T.backward(T.sum_all(T.maxpool2x2(t)))
    assert np.array_equal(t.grad[0, 0], [[1.0, 0.0], [0.0, 0.0]])


def test_maxpool_rejects_odd_size():
    with pytest.raises(ValueError):
        T.maxpool2x2(Tensor(np.zeros((1, 1, 3, 4))))


def test_upsample_nearest(rng):
    x = rng.normal(size=(1, 2, 3, 3))
    up = T.upsample_nearest_2x(Tensor(x)).data
    for i in range(6):
        for j in range(6):
            assert up[0, :, i, j].tolist() == x[0, :, i // 2, j // 2].tolist()


def test_relu_sigmoid_values():
    x = np.array([-800.0, -1.0, 0.0, 2.0, 800.0])
    assert T.relu(Tensor(x)).data.tolist() == [0.0, 0.0, 0.0, 2.0, 800.0]
    s = T.sigmoid(Tensor(x)).data
    assert s[2] == 0.5 and s[0] == 0.0 and s[-1] == 1.0
    assert abs(s[3] - 1 / (1 + np.exp(-2.0))) < 1e-15


def test_hadamard_broadcast_loop(rng):
    f = rng.normal(size=(2, 3, 4, 4))
    a = rng.random(size=(2, 1, 4, 4))
    got = T.hadamard_broadcast(Tensor(f), Tensor(a)).data
    for n in range(2):
        for c in range(3):
            for i in range(4):
                for j in range(4):
                    assert got[n, c, i, j] == f[n, c, i, j] * a[n, 0, i, j]
    with pytest.raises(ValueError):
        T.hadamard_broadcast(Tensor(f), Tensor(rng.random((2, 1, 2, 2))))
    with pytest.raises(ValueError):
        T.hadamard_broadcast(Tensor(f), Tensor(rng.random((2, 3, 4, 4))))


def test_batchnorm_train_and_eval(rng):
    x = rng.normal(loc=3.0, scale=2.0, size=(4, 2, 3, 3))
    gamma, beta = np.array([2.0, 0.5]), np.array([0.1, -0.2])
    rm, rv = np.zeros(2), np.ones(2)
    y = T.batchnorm2d(Tensor(x), Tensor(gamma), Tensor(beta), rm, rv, training=True).data
    for c in range(2):
        v = x[:, c].ravel()
        mu, var = v.mean(), ((v - v.mean()) ** 2).mean()
        np.testing.assert_allclose(y[:, c], gamma[c] * (x[:, c] - mu) / np.sqrt(var + 1e-5) + beta[c], atol=1e-12)
        np.testing.assert_allclose(rm[c], 0.1 * mu, atol=1e-12)
        np.testing.assert_allclose(rv[c], 0.9 + 0.1 * v.var(ddof=1), atol=1e-12)
    y_eval = T.batchnorm2d(Tensor(x), Tensor(gamma), Tensor(beta), rm, rv, training=False).data
    np.testing.assert_allclose(y_eval[:, 1], 0.5 * (x[:, 1] - rm[1]) / np.sqrt(rv[1] + 1e-5) - 0.2, atol=1e-12)


def test_mse_loss_closed_form():
    # unit error everywhere: sum over P * H * W, mean over N
    pred = Tensor(np.ones((3, 4, 5, 5)))
    assert T.mse_loss(pred, np.zeros((3, 4, 5, 5))).item() == 4 * 25
    with pytest.raises(ValueError):
        T.mse_loss(pred, np.zeros((3, 4, 4, 4)))


def test_spatial_softmax_sums_to_one(rng):
    s = rng.normal(size=(3, 1, 5, 5)) * 10
    a = T.spatial_softmax(Tensor(s)).data
    np.testing.assert_allclose(a.sum(axis=(2, 3)), 1.0, atol=1e-12)


def test_concat_and_channel(rng):
    a, b = rng.normal(size=(1, 2, 3, 3)), rng.normal(size=(1, 1, 3, 3))
    c = T.concat([Tensor(a), Tensor(b)], axis=1)
    assert np.array_equal(c.data, np.concatenate([a, b], axis=1))
    assert np.array_equal(T.channel(c, 2).data, b)


# -- backward -----------------------------------------------------------------

def test_second_backward_raises():
    x = leaf([1.0, 2.0])
    y = T.sum_all(T.mul(x, x))
    T.backward(y)
    assert x.grad.tolist() == [2.0, 4.0]
    with pytest.raises(GraphError):
        T.backward(y)


def test_backward_needs_scalar():
    with pytest.raises(GraphError):
        T.backward(T.mul(leaf([1.0, 2.0]), 2.0))


def test_shared_subexpression_accumulates():
    x = leaf([3.0])
    y = T.sum_all(T.add(T.mul(x, x), x))
    T.backward(y)
    assert x.grad.tolist() == [7.0]


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_nan_raises_with_op_and_scope():
    x = leaf([1.0, np.inf])
    with T.scope("stack2"), pytest.raises(NonFiniteError, match="stack2"):
        T.sub(x, x)


def test_conv2d_backward_is_adjoint(rng):
    # <conv(x), g> = <x, conv^T(g)> for the input gradient
    x = leaf(rng.normal(size=(2, 3, 7, 7)))
    w = Tensor(rng.normal(size=(4, 3, 3, 3)))
    g = rng.normal(size=(2, 4, 4, 4))
    y = T.conv2d(x, w, stride=2, pad=1)
    T.backward(T.sum_all(T.mul(y, Tensor(g))))
    assert abs((y.data * g).sum() - (x.data * x.grad).sum()) < 1e-9


@pytest.mark.parametrize("op", ["conv", "conv_s2", "pool", "up", "relu", "sigmoid", "bn", "softmax", "hadamard", "mse", "concat", "add_n"])
def test_operation_gradients(rng, op):
    x = leaf(rng.normal(size=(2, 2, 4, 4)) + 0.05)
    w = leaf(rng.normal(size=(3, 2, 3, 3)))
    b = leaf(rng.normal(size=3))
    a = leaf(rng.random(size=(2, 1, 4, 4)))
    gamma, beta = leaf(rng.normal(size=2)), leaf(rng.normal(size=2))
    tgt = rng.normal(size=(2, 2, 4, 4))
    probe = Tensor(rng.normal(size=(2, 3, 4, 4)))
    fns = {
        "conv": (lambda: T.sum_all(T.mul(T.conv2d(x, w, b, 1, 1), probe)), [x, w, b]),
        "conv_s2": (lambda: T.sum_all(T.mul(T.conv2d(x, w, b, 2, 1), Tensor(probe.data[:, :, :2, :2]))), [x, w, b]),
        "pool": (lambda: T.sum_all(T.mul(T.maxpool2x2(x), Tensor(tgt[:, :, :2, :2]))), [x]),
        "up": (lambda: T.sum_all(T.mul(T.upsample_nearest_2x(x), Tensor(np.tile(tgt, (1, 1, 2, 2))))), [x]),
        "relu": (lambda: T.sum_all(T.mul(T.relu(x), Tensor(tgt))), [x]),
        "sigmoid": (lambda: T.sum_all(T.mul(T.sigmoid(x), Tensor(tgt))), [x]),
        "bn": (lambda: T.sum_all(T.mul(T.batchnorm2d(x, gamma, beta, np.zeros(2), np.ones(2), True), Tensor(tgt))), [x, gamma, beta]),
        "softmax": (lambda: T.sum_all(T.mul(T.spatial_softmax(a), Tensor(tgt[:, :1]))), [a]),
        "hadamard": (lambda: T.sum_all(T.mul(T.hadamard_broadcast(x, a), Tensor(tgt))), [x, a]),
        "mse": (lambda: T.mse_loss(x, tgt), [x]),
        "concat": (lambda: T.sum_all(T.mul(T.concat([x, a], 1), Tensor(rng.normal(size=(2, 3, 4, 4)) * 0 + 1.5))), [x, a]),
        "add_n": (lambda: T.sum_all(T.mul(T.add_n([x, x, T.mul(x, x)]), Tensor(tgt))), [x]),
    }
    fn, params = fns[op]
    report = grad_check(fn, params)
    assert report.passed, (op, report.max_rel_error)


# -- properties ---------------------------------------------------------------

@settings(max_examples=30, deadline=None)
@given(h=st.integers(1, 9), w=st.integers(1, 9), k=st.sampled_from([1, 3, 5, 7]), stride=st.integers(1, 3))
def test_conv_output_shape(h, w, k, stride):
    pad = k // 2
    x = Tensor(np.zeros((1, 2, h, w)))
    y = T.conv2d(x, Tensor(np.zeros((3, 2, k, k))), stride=stride, pad=pad)
    assert y.shape == (1, 3, (h + 2 * pad - k) // stride + 1, (w + 2 * pad - k) // stride + 1)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), alpha=st.floats(-3, 3), beta=st.floats(-3, 3))
def test_conv_is_linear_in_input(seed, alpha, beta):
    r = np.random.default_rng(seed)
    x1, x2 = r.normal(size=(1, 2, 5, 5)), r.normal(size=(1, 2, 5, 5))
    w = Tensor(r.normal(size=(2, 2, 3, 3)))
    lhs = T.conv2d(Tensor(alpha * x1 + beta * x2), w, pad=1).data
    rhs = alpha * T.conv2d(Tensor(x1), w, pad=1).data + beta * T.conv2d(Tensor(x2), w, pad=1).data
    np.testing.assert_allclose(lhs, rhs, atol=1e-10)


@settings(max_examples=25, deadline=None)
@given(n=st.integers(1, 3), c=st.integers(1, 4), h=st.sampled_from([2, 4, 6]))
def test_pool_upsample_shapes(n, c, h):
    x = Tensor(np.zeros((n, c, h, h)))
    assert T.maxpool2x2(x).shape == (n, c, h // 2, h // 2)
    assert T.upsample_nearest_2x(x).shape == (n, c, 2 * h, 2 * h)


def test_forward_is_deterministic(rng):
    x, w = rng.normal(size=(2, 3, 8, 8)), rng.normal(size=(4, 3, 3, 3))
    a = T.conv2d(Tensor(x), Tensor(w), pad=1).data
    b = T.conv2d(Tensor(x), Tensor(w), pad=1).data
    assert a.tobytes() == b.tobytes()
