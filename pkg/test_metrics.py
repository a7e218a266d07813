"""Tests for forecast errors, edge precision/recall and AP / AF."""
import numpy as np
import pytest

from skicl.config import DataValidationError
from skicl.consistency import StructuralKnowledge
from skicl.metrics import (
    average_forgetting,
    average_performance,
    build_metric_report,
    mae,
    precision_recall,
    rmse,
    structure_error,
)
from skicl.tensor import ShapeError


def test_exact_forecast_has_zero_error():
    y = np.random.default_rng(0).normal(size=(4, 3, 2))
    assert mae(y, y) == 0.0
    assert rmse(y, y) == 0.0


def test_hand_example():
    assert mae([1.0, 2.0], [2.0, 4.0]) == pytest.approx(1.5)
    assert rmse([1.0, 2.0], [2.0, 4.0]) == pytest.approx(np.sqrt(2.5))


def test_constant_offset():
    y = np.random.default_rng(1).normal(size=(5, 2))
    assert mae(y, y - 0.3) == pytest.approx(0.3)
    assert rmse(y, y - 0.3) == pytest.approx(0.3)


def test_rmse_never_below_mae():
    rng = np.random.default_rng(2)
    for _ in range(1000):
        shape = tuple(rng.integers(1, 5, size=2))
        a, b = rng.normal(size=shape), rng.normal(size=shape)
        assert rmse(a, b) >= mae(a, b) - 1e-12


def test_error_inputs():
    with pytest.raises(ShapeError):
        mae(np.zeros(3), np.zeros(4))
    with pytest.raises(ValueError):
        rmse(np.zeros(0), np.zeros(0))


def half_prior():
    adjacency = np.eye(4)
    adjacency[0, 1] = adjacency[1, 0] = adjacency[2, 3] = adjacency[3, 2] = 1
    adjacency[0, 2] = adjacency[2, 0] = 1
    return StructuralKnowledge(adjacency=adjacency)


def test_exact_recovery():
    prior = half_prior()
    assert precision_recall(prior.adjacency.astype(int), prior) == (1.0, 1.0)


def test_all_ones_against_half_prior():
    assert precision_recall(np.ones((4, 4), dtype=int), half_prior()) == (0.5, 1.0)


def test_empty_prediction_warns(caplog):
    assert precision_recall(np.zeros((4, 4), dtype=int), half_prior()) == (0.0, 0.0)
    assert "precision set to 0" in caplog.text


def test_masked_entries_are_ignored():
    mask = np.ones((4, 4))
    mask[0, 3] = mask[3, 0] = 0
    prior = StructuralKnowledge(adjacency=half_prior().adjacency, mask=mask)
    predicted = prior.adjacency.astype(int).copy()
    predicted[0, 3] = 1
    assert precision_recall(predicted, prior) == (1.0, 1.0)


def test_non_binary_prediction_rejected():
    with pytest.raises(DataValidationError):
        precision_recall(np.full((4, 4), 0.5), half_prior())


def test_structure_error_on_observed_off_diagonal_entries():
    prior = StructuralKnowledge(adjacency=np.array([[0.0, 1.0], [0.5, 0.0]]), edge_kind="continuous",
                                mask=np.array([[1, 1], [0, 1]]))
    learned = np.array([[5.0, 0.0], [9.0, 0.0]])
    g_mae, g_rmse = structure_error(learned, prior)
    assert g_mae == pytest.approx(1.0)
    assert g_rmse == pytest.approx(1.0)


def test_ap_af_hand_example():
    P = np.array([[10.0, np.nan], [12.0, 8.0]])
    assert average_performance(P, 2) == pytest.approx(10.0)
    assert average_forgetting(P, 2) == pytest.approx(2.0)


def test_no_forgetting():
    P = np.tril(np.tile([3.0, 5.0, 7.0], (3, 1)))
    P[np.triu_indices(3, 1)] = np.nan
    assert average_forgetting(P, 3) == 0.0


def test_first_regime():
    P = np.array([[4.2]])
    assert average_performance(P, 1) == pytest.approx(4.2)
    with pytest.raises(ValueError, match="undefined for i<2"):
        average_forgetting(P, 1)


def test_metric_report_structure():
    P = np.array([[10.0, np.nan], [12.0, 8.0]])
    report = build_metric_report({"mae": P}, ["a", "b"])
    assert report["a"]["mae"] == {"AP": 10.0, "AF": None}
    assert report["b"]["mae"]["AF"] == pytest.approx(2.0)
