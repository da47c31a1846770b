import numpy as np
import pytest

from mcapose import tensor as T
from mcapose.gradcheck import grad_check, relative_error
from mcapose.optim import OptimizerState, RMSprop, rmsprop_step
from mcapose.tensor import Tensor

from conftest import leaf


def test_relative_error_floor():
    assert relative_error(np.array([0.0]), np.array([1e-9]))[0] == pytest.approx(1e-4)
    assert relative_error(np.array([2.0]), np.array([1.0]))[0] == 0.5


def test_grad_check_passes_on_cubic():
    x = leaf([0.3, -1.2, 2.0])
    rep = grad_check(lambda: T.sum_all(T.mul(T.mul(x, x), x)), x)
    assert rep.passed
    np.testing.assert_allclose(rep.analytic, 3 * np.array([0.3, -1.2, 2.0]) ** 2)


def test_grad_check_catches_wrong_backward():
    """Negative control: a deliberately mis-scaled gradient must be flagged."""
    x = leaf([0.5, 1.5])

    def broken():
        y = T.mul(x, x)

        def bw(g, grads):
            T._send(grads, x, 3.0 * x.data * g)  # should be 2x

        return T.sum_all(T._make(y.data, (x,), "broken_square", bw))

    rep = grad_check(broken, x)
    assert not rep.passed
    assert rep.max_rel_error == pytest.approx(1 / 3, rel=1e-6)


def test_grad_check_rejects_nondeterministic_fn():
    x = leaf([1.0])
    r = np.random.default_rng(0)
    with pytest.raises(RuntimeError):
        grad_check(lambda: T.sum_all(T.mul(x, float(r.normal()))), x)


def test_grad_check_refines_across_a_kink():
    # x sits 5e-5 from the relu kink, inside the default +-1e-4 interval
    x = leaf([5e-5, -0.3, 0.7])
    rep = grad_check(lambda: T.sum_all(T.relu(x)), x)
    assert rep.passed
    assert rep.numeric.tolist() == pytest.approx([1.0, 0.0, 1.0], abs=1e-9)
    plain = grad_check(lambda: T.sum_all(T.relu(x)), x, refinements=0)
    assert not plain.passed  # the unrefined estimate at the kink reads 0.75


def test_grad_check_restores_params():
    x = leaf([0.1, 0.2, 0.3])
    before = x.data.copy()
    grad_check(lambda: T.sum_all(T.sigmoid(x)), x, sample=2)
    assert np.array_equal(x.data, before)


def test_rmsprop_first_step_by_hand():
    # acc = 0.01 * 1^2 = 0.01, update = lr * 1 / (0.1 + 1e-8)
    p = Tensor(np.array([0.0]), requires_grad=True)
    state = OptimizerState(lr=1e-2)
    rmsprop_step([p], [np.array([1.0])], state)
    assert state.square_avg[0][0] == pytest.approx(0.01, rel=1e-12)
    assert p.data[0] == pytest.approx(-0.09999999, rel=1e-12)
    p2 = Tensor(np.array([0.0]), requires_grad=True)
    rmsprop_step([p2], [np.array([1.0])], OptimizerState(lr=1e-1))
    assert p2.data[0] == pytest.approx(-0.99999990, rel=1e-7)


def test_rmsprop_matches_scalar_simulation():
    # minimise w^2 for 100 steps; compare against a plain-float recursion
    p = Tensor(np.array([1.5]), requires_grad=True)
    opt = RMSprop([p], lr=0.01)
    w, acc = 1.5, 0.0
    for _ in range(100):
        opt.zero_grad()
        T.backward(T.sum_all(T.mul(p, p)))
        opt.step()
        g = 2 * w
        acc = 0.99 * acc + 0.01 * g * g
        w -= 0.01 * g / (acc**0.5 + 1e-8)
    assert p.data[0] == pytest.approx(w, abs=1e-12)
    assert abs(w) < 1.5


def test_rmsprop_zero_lr_is_noop():
    p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    rmsprop_step([p], [np.array([3.0, 4.0])], OptimizerState(lr=0.0))
    assert p.data.tolist() == [1.0, -2.0]


def test_rmsprop_shape_errors():
    p = Tensor(np.zeros(2), requires_grad=True)
    with pytest.raises(ValueError):
        rmsprop_step([p], [np.zeros(3)], OptimizerState())
    with pytest.raises(ValueError):
        rmsprop_step([p], [], OptimizerState())
