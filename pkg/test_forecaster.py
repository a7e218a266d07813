"""Tests for message passing, TGConv blocks and the full forecasting model."""
from dataclasses import replace

import numpy as np
import pytest

from skicl.config import ConfigError
from skicl.consistency import StructuralKnowledge, consistency_loss, total_loss
from skicl.forecaster import SkiclModel, TGConvBlock, forecasting_loss, message_passing
from skicl.tensor import ShapeError, Tensor, gradcheck


def test_message_passing_without_edges_keeps_self_term():
    rng = np.random.default_rng(0)
    r = rng.normal(size=(3, 2))
    w_self, w_neigh = Tensor(rng.normal(size=(2, 2))), Tensor(rng.normal(size=(2, 2)))
    out = message_passing(np.zeros((3, 3)), Tensor(r), w_self, w_neigh)
    assert np.allclose(out.numpy(), r @ w_self.data)


def test_message_passing_hand_example():
    adjacency = np.zeros((2, 2))
    adjacency[1, 0] = 0.5  # edge from variable 2 into variable 1
    r = Tensor(np.array([[1.0], [2.0]]))
    out = message_passing(adjacency, r, Tensor(np.eye(1)), Tensor(np.eye(1)))
    assert np.allclose(out.numpy(), [[2.0], [2.0]])


def test_message_passing_dimension_mismatch():
    with pytest.raises(ShapeError):
        message_passing(np.zeros((3, 3)), Tensor(np.ones((2, 1))), Tensor(np.eye(1)), Tensor(np.eye(1)))


def test_zero_weight_block_is_identity():
    block = TGConvBlock(2, 2, 2, 1, np.random.default_rng(0))
    for p in block.named_parameters().values():
        p.data[...] = 0.0
    h = np.random.default_rng(1).normal(size=(2, 3, 2, 6))
    adjacency = np.random.default_rng(2).random((2, 3, 3))
    out = block(Tensor(h), Tensor(adjacency))
    assert np.allclose(out.numpy(), h)


def test_block_without_edges_is_temporal_conv_plus_residual():
    block = TGConvBlock(2, 2, 3, 2, np.random.default_rng(0))
    block.w_self.data[...] = np.eye(2)
    h = np.random.default_rng(1).normal(size=(2, 3, 2, 10))
    out = block(Tensor(h), Tensor(np.zeros((2, 3, 3)))).numpy()
    temporal = block.temporal(Tensor(h.reshape((6, 2, 10)))).numpy().reshape(h.shape)
    assert np.allclose(out, np.maximum(temporal, 0.0) + h)


@pytest.mark.parametrize("source", [0, 1, 2])
def test_perturbation_reaches_only_adjacent_variables(source):
    n, c, t = 3, 2, 6
    block = TGConvBlock(c, c, 2, 1, np.random.default_rng(0))
    # pass-through temporal path: relu(x + 1) == x + 1 for x > -1
    block.temporal.weight.data[...] = 0.0
    block.temporal.weight.data[:, :, 0] = np.eye(c)
    block.temporal.bias.data[...] = 1.0
    block.w_self.data[...] = 0.0
    block.w_neigh.data[...] = np.eye(c)
    adjacency = np.zeros((1, n, n))
    adjacency[0, 0, 1] = 0.7
    adjacency[0, 2, 0] = 0.4
    h = np.random.default_rng(1).uniform(0.0, 1.0, size=(1, n, c, t))
    moved = h.copy()
    moved[0, source] += 0.5
    base = block(Tensor(h), Tensor(adjacency)).numpy() - h
    out = block(Tensor(moved), Tensor(adjacency)).numpy() - moved
    for target in range(n):
        changed = not np.allclose(base[0, target], out[0, target])
        assert changed == (adjacency[0, source, target] != 0.0)


def test_block_needs_projection_when_widths_differ():
    with pytest.raises(ConfigError):
        TGConvBlock(1, 2, 2, 1, np.random.default_rng(0), residual_projection=False)


def test_zero_regressor_predicts_zero(model_config):
    model = SkiclModel(model_config, seed=0)
    model.forecaster.regressor.weight.data[:] = 0.0
    model.forecaster.regressor.bias.data[:] = 0.0
    out = model(np.random.default_rng(0).normal(size=(4, 3, 8)))
    assert out.prediction.shape == (4, 3, 2)
    assert np.array_equal(out.prediction.numpy(), np.zeros((4, 3, 2)))


def test_model_is_deterministic(model_config):
    x = np.random.default_rng(0).normal(size=(2, 3, 8))
    first = SkiclModel(model_config, seed=5)(x).prediction.numpy()
    second = SkiclModel(model_config, seed=5)(x).prediction.numpy()
    assert np.array_equal(first, second)


def test_model_rejects_wrong_variable_count(model_config):
    model = SkiclModel(model_config, seed=0)
    with pytest.raises(ShapeError, match="variables"):
        model(np.zeros((1, 4, 8)))


def test_model_requires_resolved_variable_count(model_config):
    with pytest.raises(ConfigError):
        SkiclModel(replace(model_config, n_vars=None))


def test_forecasting_loss_hand_example():
    loss = forecasting_loss(Tensor(np.array([[[1.0, 2.0]]])), np.zeros((1, 1, 2)))
    assert loss.item() == pytest.approx(2.5)


def test_forecasting_loss_exact_fit_is_zero():
    y = np.random.default_rng(0).normal(size=(3, 2, 4))
    assert forecasting_loss(Tensor(y), y).item() == 0.0


def test_full_model_gradients_match_finite_differences(model_config):
    model = SkiclModel(model_config, seed=0)
    rng = np.random.default_rng(1)
    x = rng.normal(size=(2, 3, 8))
    y = rng.normal(size=(2, 3, 2))
    prior = StructuralKnowledge(adjacency=np.array([[1, 1, 0], [0, 1, 0], [1, 0, 1]]))

    def loss():
        out = model(x)
        return total_loss(forecasting_loss(out.prediction, y), consistency_loss(out.graph, prior), 0.7)

    assert gradcheck(loss, list(model.named_parameters().values())) < 1e-4


def test_overfits_constant_series(model_config):
    from skicl.optim import Adam

    model = SkiclModel(model_config, seed=0)
    x = np.full((4, 3, 8), 0.7)
    y = np.full((4, 3, 2), 0.7)
    opt = Adam(model.named_parameters(), lr=0.01)
    for step in range(900):
        if step == 600:
            opt.lr = 1e-3
        opt.zero_grad()
        forecasting_loss(model(x).prediction, y).backward()
        opt.step()
    assert np.allclose(model(x).prediction.numpy(), 0.7, atol=1e-2)
