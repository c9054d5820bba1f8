import numpy as np
import pytest

from toyedit.autograd import Tensor
from toyedit.optim import AdamWState, ConfigError, adamw_step


def make(value, grad):
    p = Tensor(np.array(value, dtype=np.float32), requires_grad=True)
    p.grad = np.array(grad, dtype=np.float32)
    return p


def test_zero_grad_no_decay_leaves_params():
    p = make([1.0, -2.0], [0.0, 0.0])
    params = {"p": p}
    state = AdamWState.init(params)
    adamw_step(params, state, lr=0.1)
    np.testing.assert_array_equal(p.data, [1.0, -2.0])
    assert state.t == 1


def test_single_scalar_first_step():
    # hand evaluation: m=0.1, v=0.001, m_hat=1, v_hat=1
    # theta' = 1 - 0.1 * 1/(1 + 1e-8) ~= 0.9
    p = make(1.0, 1.0)
    params = {"p": p}
    state = AdamWState.init(params)
    adamw_step(params, state, lr=0.1)
    assert p.data == pytest.approx(0.9, abs=1e-6)


def test_decay_only_path():
    p = make(2.0, 0.0)
    params = {"p": p}
    state = AdamWState.init(params)
    adamw_step(params, state, lr=0.1, weight_decay=0.01)
    # theta * (1 - lr * wd), decoupled from the (zero) gradient update
    assert p.data == pytest.approx(2.0 * (1 - 0.1 * 0.01), abs=1e-7)


def test_lr_must_be_positive():
    p = make(1.0, 1.0)
    state = AdamWState.init({"p": p})
    with pytest.raises(ConfigError):
        adamw_step({"p": p}, state, lr=0.0)


def test_step_counter_strictly_increases():
    p = make(1.0, 0.5)
    params = {"p": p}
    state = AdamWState.init(params)
    for expected in (1, 2, 3):
        adamw_step(params, state, lr=0.01)
        assert state.t == expected


def test_matches_reference_adamw_sequence():
    # independent reference implementation, plain numpy float64
    theta = 0.7
    m = v = 0.0
    lr, b1, b2, eps, wd = 0.05, 0.9, 0.999, 1e-8, 0.1
    grads = [0.3, -0.2, 0.8]
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mh = m / (1 - b1 ** t)
        vh = v / (1 - b2 ** t)
        theta = theta * (1 - lr * wd) - lr * mh / (np.sqrt(vh) + eps)

    p = make(0.7, 0.0)
    params = {"p": p}
    state = AdamWState.init(params)
    for g in grads:
        p.grad = np.array(g, dtype=np.float32)
        adamw_step(params, state, lr=lr, weight_decay=wd)
    assert p.data == pytest.approx(theta, abs=1e-6)
