"""Tests for the module system and building-block layers."""
import numpy as np
import pytest

from skicl.config import ConfigError
from skicl.layers import BatchNorm, Conv1d, Linear, Module
from skicl.tensor import Tensor, gradcheck


class Pair(Module):
    def __init__(self, rng):
        super().__init__()
        self.first = Linear(3, 2, rng)
        self.stack = [Linear(2, 2, rng, bias=False), BatchNorm(2)]


def test_named_parameters_follow_attribute_order():
    model = Pair(np.random.default_rng(0))
    assert list(model.named_parameters()) == [
        "first.weight", "first.bias", "stack.0.weight", "stack.1.gamma", "stack.1.beta",
    ]
    assert model.num_parameters() == 6 + 2 + 4 + 2 + 2
    assert list(model.named_buffers()) == ["stack.1.running_mean", "stack.1.running_var"]


def test_state_dict_round_trip():
    source = Pair(np.random.default_rng(0))
    source.stack[1].running_mean = np.array([0.5, -0.5])
    target = Pair(np.random.default_rng(1))
    target.load_state_dict(source.state_dict())
    for name, p in source.named_parameters().items():
        assert np.array_equal(p.data, target.named_parameters()[name].data)
    assert np.array_equal(target.stack[1].running_mean, [0.5, -0.5])


def test_load_state_dict_rejects_missing_keys():
    model = Pair(np.random.default_rng(0))
    state = model.state_dict()
    del state["params"]["first.bias"]
    with pytest.raises(ConfigError, match="first.bias"):
        model.load_state_dict(state)


def test_train_eval_propagates():
    model = Pair(np.random.default_rng(0))
    model.eval()
    assert not any(m.training for m in model.modules())
    model.train()
    assert all(m.training for m in model.modules())


def test_batchnorm_normalizes_in_training_and_uses_running_stats_in_eval():
    rng = np.random.default_rng(0)
    bn = BatchNorm(2)
    x = Tensor(rng.normal(3.0, 2.0, size=(16, 2, 5)))
    out = bn(x).numpy()
    assert np.allclose(out.mean(axis=(0, 2)), 0.0, atol=1e-10)
    assert not np.allclose(bn.running_mean, 0.0)
    bn.eval()
    before = bn.running_mean.copy()
    bn(x)
    assert np.array_equal(bn.running_mean, before)


def test_batchnorm_gradcheck():
    rng = np.random.default_rng(1)
    bn = BatchNorm(2)
    bn.gamma.data[:] = [1.5, 0.5]
    x = Tensor(rng.normal(size=(4, 2, 3)), requires_grad=True)
    weights = rng.normal(size=(4, 2, 3))
    assert gradcheck(lambda: (bn(x) * weights).sum(), [x, bn.gamma, bn.beta]) < 1e-4


def test_conv1d_rejects_empty_kernel():
    with pytest.raises(ConfigError):
        Conv1d(1, 1, 0, np.random.default_rng(0))
