"""Tests for structural priors and the consistency regularizer."""
import numpy as np
import pytest

from skicl.config import ConfigError, DataValidationError, EdgeKind
from skicl.consistency import StructuralKnowledge, consistency_loss, total_loss
from skicl.graph import LearnedGraph
from skicl.optim import Adam
from skicl.tensor import Tensor, sigmoid


def graph_of(values, kind=EdgeKind.BINARY, requires_grad=False):
    return LearnedGraph(adjacency=Tensor(np.asarray(values, dtype=float), requires_grad=requires_grad), edge_kind=kind)


def test_continuous_exact_match_is_zero():
    prior = StructuralKnowledge(adjacency=np.array([[0.0, 0.3], [0.2, 0.0]]), edge_kind="continuous")
    loss = consistency_loss(graph_of([prior.adjacency], EdgeKind.CONTINUOUS), prior)
    assert loss.item() == 0.0


def test_single_observed_entry_bce():
    mask = np.zeros((2, 2))
    mask[0, 1] = 1
    prior = StructuralKnowledge(adjacency=np.array([[0.0, 1.0], [0.0, 0.0]]), mask=mask)
    loss = consistency_loss(graph_of(np.full((1, 2, 2), 0.5)), prior)
    assert loss.item() == pytest.approx(0.6931, abs=1e-4)


def test_masked_entries_do_not_change_loss_or_receive_gradient():
    mask = np.array([[1.0, 0.0], [1.0, 1.0]])
    prior = StructuralKnowledge(adjacency=np.array([[1.0, 0.0], [1.0, 1.0]]), mask=mask)
    base = np.array([[[0.7, 0.2], [0.6, 0.9]]])
    changed = base.copy()
    changed[0, 0, 1] = 0.95
    assert consistency_loss(graph_of(base), prior).item() == pytest.approx(consistency_loss(graph_of(changed), prior).item())
    graph = graph_of(base, requires_grad=True)
    consistency_loss(graph, prior).backward()
    assert graph.adjacency.grad[0, 0, 1] == 0.0
    assert graph.adjacency.grad[0, 0, 0] != 0.0


def test_fully_masked_window_contributes_zero():
    prior = StructuralKnowledge(adjacency=np.eye(2), mask=np.zeros((2, 2)))
    assert consistency_loss(graph_of(np.full((1, 2, 2), 0.3)), prior).item() == 0.0


def test_loss_decreases_when_optimizing_logits_alone():
    rng = np.random.default_rng(0)
    prior = StructuralKnowledge(adjacency=(rng.random((4, 4)) > 0.5).astype(float))
    logits = Tensor(rng.normal(size=(1, 4, 4)), requires_grad=True)
    opt = Adam({"logits": logits}, lr=0.1)
    values = []
    for _ in range(50):
        opt.zero_grad()
        loss = consistency_loss(LearnedGraph(adjacency=sigmoid(logits), edge_kind=EdgeKind.BINARY), prior)
        values.append(loss.item())
        loss.backward()
        opt.step()
    assert all(b <= a + 1e-12 for a, b in zip(values, values[1:]))
    assert values[-1] < 0.5 * values[0]


def test_kind_mismatch_is_rejected():
    prior = StructuralKnowledge(adjacency=np.eye(2), edge_kind="continuous")
    with pytest.raises(ConfigError):
        consistency_loss(graph_of(np.full((1, 2, 2), 0.5)), prior)


def test_binary_prior_rejects_fractional_observed_entries():
    with pytest.raises(DataValidationError):
        StructuralKnowledge(adjacency=np.array([[1.0, 0.5], [0.0, 1.0]]))


def test_fractional_entry_allowed_when_masked():
    prior = StructuralKnowledge(adjacency=np.array([[1.0, 0.5], [0.0, 1.0]]), mask=np.array([[1, 0], [1, 1]]))
    assert prior.observed_count == 3


def test_prior_arrays_are_read_only():
    prior = StructuralKnowledge(adjacency=np.eye(2))
    with pytest.raises(ValueError):
        prior.adjacency[0, 1] = 1.0


def test_total_loss():
    assert total_loss(2.5, 0.5, 1.0).item() == pytest.approx(3.0)
    assert total_loss(2.5, 0.5, 0.0).item() == pytest.approx(2.5)
    with pytest.raises(ConfigError):
        total_loss(2.5, 0.5, -0.1)
