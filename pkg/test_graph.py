"""Tests for node embedding, edge generation and binarization."""
import numpy as np
import pytest

from conftest import tiny_model_config
from skicl.config import ConfigError, EdgeKind, EncoderConfig
from skicl.graph import EdgeGenerator, GraphInference, LearnedGraph, TemporalEncoder, binarize, mean_graph
from skicl.tensor import Tensor


def test_identical_variable_rows_give_identical_embeddings(model_config):
    net = GraphInference(model_config, np.random.default_rng(0))
    x = np.random.default_rng(1).normal(size=(2, 3, 8))
    x[:, 2] = x[:, 0]
    z = net.encode_nodes(x).z.numpy()
    assert np.allclose(z[:, 0], z[:, 2])
    assert not np.allclose(z[:, 0], z[:, 1])


def test_different_windows_give_different_embeddings(model_config):
    net = GraphInference(model_config, np.random.default_rng(0))
    rng = np.random.default_rng(2)
    z = net.encode_nodes(rng.normal(size=(2, 3, 8))).z.numpy()
    assert not np.allclose(z[0], z[1])


def test_identical_embeddings_give_constant_adjacency():
    edges = EdgeGenerator(4, 5, np.random.default_rng(0))
    z = Tensor(np.tile(np.arange(4.0), (1, 3, 1)))
    logits = edges(z).numpy()
    assert np.allclose(logits, logits[0, 0, 0])


def test_edge_generator_is_permutation_equivariant():
    edges = EdgeGenerator(4, 5, np.random.default_rng(0))
    z = np.random.default_rng(1).normal(size=(1, 3, 4))
    perm = [2, 0, 1]
    base = edges(Tensor(z)).numpy()[0]
    permuted = edges(Tensor(z[:, perm])).numpy()[0]
    assert np.allclose(permuted, base[np.ix_(perm, perm)])


def test_edge_generator_matches_explicit_pair_concatenation():
    rng = np.random.default_rng(3)
    edges = EdgeGenerator(2, 3, rng)
    z = rng.normal(size=(1, 2, 2))
    w1, b1 = edges.fc1.weight.data, edges.fc1.bias.data
    w2, b2 = edges.fc2.weight.data, edges.fc2.bias.data
    expected = np.empty((2, 2))
    for i in range(2):
        for j in range(2):
            pair = np.concatenate([z[0, i], z[0, j]])
            expected[i, j] = (np.maximum(pair @ w1 + b1, 0.0) @ w2 + b2)[0]
    assert np.allclose(edges(Tensor(z)).numpy()[0], expected)


def test_zero_logits_give_half_probabilities(model_config):
    net = GraphInference(model_config, np.random.default_rng(0))
    net.edges.fc2.weight.data[:] = 0.0
    net.edges.fc2.bias.data[:] = 0.0
    _, graph = net(np.random.default_rng(1).normal(size=(2, 3, 8)))
    assert graph.edge_kind is EdgeKind.BINARY
    assert np.allclose(graph.adjacency.numpy(), 0.5)


def test_continuous_graph_clips_negative_outputs():
    net = GraphInference(tiny_model_config(edge_kind="continuous"), np.random.default_rng(0))
    net.edges.fc2.weight.data[:] = 0.0
    net.edges.fc2.bias.data[:] = -1.0
    _, graph = net(np.random.default_rng(1).normal(size=(1, 3, 8)))
    assert np.array_equal(graph.adjacency.numpy(), np.zeros((1, 3, 3)))


def test_encoder_rejects_short_windows():
    cfg = EncoderConfig(channels=(2, 2), kernel_sizes=(3, 3), dilation=2, batch_norm=False, embedding_dim=4)
    with pytest.raises(ConfigError, match="receptive field"):
        TemporalEncoder(cfg, input_len=8, rng=np.random.default_rng(0))


def test_binarize_half_is_zero():
    assert not binarize(np.full((3, 3), 0.5), 0.5).any()


def test_binarize_recovers_clamped_prior():
    prior = np.array([[1, 0, 1], [0, 1, 0], [1, 1, 1]])
    theta = np.where(prior == 1, 0.99, 0.01)
    assert np.array_equal(binarize(theta), prior)


def test_binarize_matches_strict_comparison():
    theta = np.random.default_rng(0).random((4, 5, 5))
    assert np.array_equal(binarize(theta, 0.5), (theta > 0.5).astype(np.int8))


@pytest.mark.parametrize("threshold", [0.0, 1.0, -0.2, 1.5])
def test_binarize_rejects_threshold_outside_unit_interval(threshold):
    with pytest.raises(ConfigError):
        binarize(np.zeros((2, 2)), threshold)


def test_binarize_refuses_continuous_graphs():
    graph = LearnedGraph(adjacency=Tensor(np.zeros((1, 2, 2))), edge_kind=EdgeKind.CONTINUOUS)
    with pytest.raises(ConfigError):
        binarize(graph)


def test_mean_graph_averages_windows():
    graphs = np.stack([np.zeros((2, 2)), np.ones((2, 2))])
    assert np.allclose(mean_graph(graphs), 0.5)
