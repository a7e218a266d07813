"""Tests for Adam and the step learning-rate schedule."""
import numpy as np
import pytest

from skicl.config import ConfigError
from skicl.optim import Adam, AdamState, adam_step, step_lr
from skicl.tensor import Tensor


def test_zero_gradient_leaves_params_unchanged():
    param = np.array([1.0, -2.0])
    state = AdamState.zeros_like(param, lr=1e-3)
    for _ in range(5):
        adam_step(param, np.zeros(2), state)
    assert np.array_equal(param, [1.0, -2.0])


def test_first_step_magnitude():
    param = np.array([0.0])
    state = AdamState.zeros_like(param, lr=1e-3)
    adam_step(param, np.array([1.0]), state)
    assert param[0] == pytest.approx(-1e-3 / (1.0 + 1e-8), rel=1e-9)
    assert state.t == 1


@pytest.mark.parametrize("epoch, expected", [(0, 1e-4), (19, 1e-4), (20, 0.8e-4), (40, 0.64e-4)])
def test_step_schedule(epoch, expected):
    assert step_lr(epoch, 1e-4, 0.8, 20) == pytest.approx(expected)


def test_step_schedule_rejects_zero_step():
    with pytest.raises(ConfigError):
        step_lr(3, step=0)


def test_adam_missing_grad_names_parameter():
    params = {"w": Tensor(np.ones(2), requires_grad=True), "b": Tensor(np.ones(1), requires_grad=True)}
    params["w"].grad = np.ones(2)
    opt = Adam(params, lr=1e-2)
    with pytest.raises(ValueError, match="'b'"):
        opt.step()
    opt.step(skip_missing=True)
    assert params["b"].data[0] == 1.0


def test_adam_lr_setter_reaches_states():
    opt = Adam({"w": Tensor(np.ones(2), requires_grad=True)}, lr=1e-3)
    opt.lr = 5e-4
    assert opt.states["w"].lr == 5e-4


def test_adam_minimizes_quadratic():
    w = Tensor(np.array([3.0, -2.0]), requires_grad=True)
    opt = Adam({"w": w}, lr=0.1)
    for _ in range(300):
        opt.zero_grad()
        (w * w).sum().backward()
        opt.step()
    assert np.all(np.abs(w.data) < 0.05)
