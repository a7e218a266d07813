"""
Metrics for SKI-CL.
Forecast errors, structure similarity, and continual-learning aggregates (AP / AF).
"""

import logging
from typing import Dict, Optional, Tuple

import numpy as np

from .config import DataValidationError, EdgeKind
from .consistency import StructuralKnowledge
from .tensor import ShapeError

logger = logging.getLogger(__name__)


# =============================================================================
# FORECAST ERRORS
# =============================================================================


def _residuals(y_true, y_pred) -> np.ndarray:
    y_true = np.asarray(y_true, dtype=np.float64)
    y_pred = np.asarray(y_pred, dtype=np.float64)
    if y_true.shape != y_pred.shape:
        raise ShapeError(f"Metric inputs differ in shape: {y_true.shape} vs {y_pred.shape}")
    if y_true.size == 0:
        raise ValueError("Metric inputs are empty")
    return y_pred - y_true


def mae(y_true, y_pred) -> float:
    """Mean absolute error over every variable, horizon step and window."""
    return float(np.mean(np.abs(_residuals(y_true, y_pred))))


def rmse(y_true, y_pred) -> float:
    """Root mean squared error over every variable, horizon step and window."""
    r = _residuals(y_true, y_pred)
    return float(np.sqrt(np.mean(r * r)))


# =============================================================================
# STRUCTURE SIMILARITY
# =============================================================================


def precision_recall(
    predicted: np.ndarray,
    prior: StructuralKnowledge,
    warn: bool = True,
) -> Tuple[float, float]:
    """
    Edge precision and recall of a 0/1 graph against a binary prior.

    The diagonal and masked-out entries are excluded. An empty denominator
    yields 0.

    Args:
        predicted: 0/1 matrix of shape (N, N)
        prior: Binary structural knowledge
        warn: Log degenerate denominators

    Returns:
        (precision, recall)
    """
    predicted = np.asarray(predicted)
    if prior.edge_kind is not EdgeKind.BINARY:
        raise DataValidationError("precision_recall needs a binary prior")
    if predicted.shape != prior.adjacency.shape:
        raise ShapeError(f"precision_recall: predicted {predicted.shape} vs prior {prior.adjacency.shape}")
    if not np.all(np.isin(predicted, (0, 1))):
        raise DataValidationError("precision_recall: predicted graph must be 0/1")
    keep = (prior.mask == 1) & ~np.eye(predicted.shape[0], dtype=bool)
    pred = predicted[keep] == 1
    true = prior.adjacency[keep] == 1
    tp = int(np.sum(pred & true))
    fp = int(np.sum(pred & ~true))
    fn = int(np.sum(~pred & true))
    if tp + fp == 0:
        if warn:
            logger.warning("No predicted edges; precision set to 0")
        precision = 0.0
    else:
        precision = tp / (tp + fp)
    if tp + fn == 0:
        if warn:
            logger.warning("Prior has no edges; recall set to 0")
        recall = 0.0
    else:
        recall = tp / (tp + fn)
    return precision, recall


def structure_error(learned: np.ndarray, prior: StructuralKnowledge) -> Tuple[float, float]:
    """MAE and RMSE between a continuous learned graph and a continuous prior over observed off-diagonal entries."""
    learned = np.asarray(learned, dtype=np.float64)
    if learned.shape != prior.adjacency.shape:
        raise ShapeError(f"structure_error: learned {learned.shape} vs prior {prior.adjacency.shape}")
    keep = (prior.mask == 1) & ~np.eye(learned.shape[0], dtype=bool)
    if not keep.any():
        return 0.0, 0.0
    return mae(prior.adjacency[keep], learned[keep]), rmse(prior.adjacency[keep], learned[keep])


# =============================================================================
# CONTINUAL-LEARNING AGGREGATES
# =============================================================================


def _check_row(P: np.ndarray, i: int) -> np.ndarray:
    P = np.asarray(P, dtype=np.float64)
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise ShapeError(f"Performance matrix must be square, got {P.shape}")
    if not 1 <= i <= P.shape[0]:
        raise ValueError(f"Regime index {i} outside 1..{P.shape[0]}")
    row = P[i - 1, :i]
    if np.any(np.isnan(row)):
        raise ValueError(f"Performance matrix row {i} is incomplete")
    return P


def average_performance(P: np.ndarray, i: int) -> float:
    """AP after regime i (1-based): mean of P[i][1..i]."""
    P = _check_row(P, i)
    return float(np.mean(P[i - 1, :i]))


def average_forgetting(P: np.ndarray, i: int) -> float:
    """AF after regime i (1-based): mean over j < i of P[i][j] - P[j][j]."""
    if i < 2:
        raise ValueError("Average forgetting is undefined for i<2")
    P = _check_row(P, i)
    diagonal = np.diag(P)[: i - 1]
    return float(np.mean(P[i - 1, : i - 1] - diagonal))


def build_metric_report(matrices: Dict[str, np.ndarray], regime_ids: Optional[list] = None) -> Dict[str, Dict]:
    """
    AP and AF for every completed regime row and every metric.

    Returns:
        {regime_id: {metric: {"AP": float, "AF": float | None}}}, AF None for the first regime
    """
    report: Dict[str, Dict] = {}
    if not matrices:
        return report
    size = next(iter(matrices.values())).shape[0]
    regime_ids = regime_ids or [f"regime_{i + 1}" for i in range(size)]
    for i in range(1, size + 1):
        row: Dict[str, Dict] = {}
        for metric, P in matrices.items():
            if np.any(np.isnan(P[i - 1, :i])):
                continue
            row[metric] = {
                "AP": average_performance(P, i),
                "AF": average_forgetting(P, i) if i >= 2 else None,
            }
        if row:
            report[regime_ids[i - 1]] = row
    return report
