"""
Structural knowledge and the consistency regularizer between learned and prior graphs.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from .config import ConfigError, DataValidationError, EdgeKind, parse_edge_kind
from .graph import LearnedGraph
from .tensor import Tensor, ShapeError, as_tensor, binary_cross_entropy, sum_squared_error

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class StructuralKnowledge:
    """
    Prior dependency graph of a regime with an observation mask.

    Mask entries of 0 mark unknown edges that the regularizer ignores.
    Arrays are copied and frozen on construction.
    """

    adjacency: np.ndarray
    edge_kind: EdgeKind = EdgeKind.BINARY
    mask: Optional[np.ndarray] = None
    regime_id: str = ""

    def __post_init__(self):
        adjacency = np.array(self.adjacency, dtype=np.float64)
        kind = parse_edge_kind(self.edge_kind)
        if adjacency.ndim != 2 or adjacency.shape[0] != adjacency.shape[1]:
            raise DataValidationError(f"Structural prior must be square, got shape {adjacency.shape}")
        mask = np.ones_like(adjacency) if self.mask is None else np.array(self.mask, dtype=np.float64)
        if mask.shape != adjacency.shape:
            raise DataValidationError(f"Mask shape {mask.shape} differs from prior shape {adjacency.shape}")
        if not np.all(np.isin(mask, (0.0, 1.0))):
            raise DataValidationError("Mask entries must be 0 or 1")
        if not np.all(np.isfinite(adjacency)):
            raise DataValidationError("Structural prior contains non-finite values")
        observed = adjacency[mask == 1]
        if kind is EdgeKind.BINARY and not np.all(np.isin(observed, (0.0, 1.0))):
            raise DataValidationError("Binary prior has observed entries outside {0, 1}")
        if kind is EdgeKind.CONTINUOUS and np.any(observed < 0):
            raise DataValidationError("Continuous prior has negative observed entries")
        adjacency.setflags(write=False)
        mask.setflags(write=False)
        object.__setattr__(self, "adjacency", adjacency)
        object.__setattr__(self, "mask", mask)
        object.__setattr__(self, "edge_kind", kind)

    @property
    def n_vars(self) -> int:
        return self.adjacency.shape[0]

    @property
    def observed_count(self) -> int:
        return int(self.mask.sum())


PriorLike = Union[StructuralKnowledge, Sequence[StructuralKnowledge]]


def stack_priors(priors: PriorLike, batch: int):
    """Broadcast one prior or align a per-window list to (B, N, N) targets and masks."""
    if isinstance(priors, StructuralKnowledge):
        priors = [priors] * batch
    priors = list(priors)
    if len(priors) != batch:
        raise ShapeError(f"consistency: {len(priors)} priors for a batch of {batch} windows")
    kinds = {p.edge_kind for p in priors}
    if len(kinds) != 1:
        raise ConfigError(f"consistency: mixed prior edge kinds {sorted(k.value for k in kinds)}")
    targets = np.stack([p.adjacency for p in priors])
    masks = np.stack([p.mask for p in priors])
    return targets, masks, kinds.pop()


def consistency_loss(graph: LearnedGraph, priors: PriorLike) -> Tensor:
    """
    Masked discrepancy between learned adjacency and structural prior.

    Binary priors use BCE summed over observed entries, continuous priors use
    squared error; each window is normalized by its observed count and the
    result is averaged over the batch. A window with no observed entries
    contributes 0.
    """
    adjacency = graph.adjacency
    if adjacency.ndim == 2:
        adjacency = adjacency.reshape((1,) + adjacency.shape)
    batch, n, _ = adjacency.shape
    targets, masks, kind = stack_priors(priors, batch)
    if kind is not graph.edge_kind:
        raise ConfigError(
            f"consistency: prior kind '{kind.value}' does not match learned kind '{graph.edge_kind.value}'"
        )
    if targets.shape[1:] != (n, n):
        raise ShapeError(f"consistency: prior shape {targets.shape[1:]} vs learned graph {(n, n)}")
    counts = masks.sum(axis=(1, 2), keepdims=True)
    weight = np.where(counts > 0, masks / np.maximum(counts, 1.0), 0.0) / batch
    if kind is EdgeKind.BINARY:
        return binary_cross_entropy(adjacency, targets, weight)
    return sum_squared_error(adjacency, targets, weight)


def total_loss(forecast_loss, graph_loss, lam: float) -> Tensor:
    """L = L_F + lam * L_G."""
    if lam < 0:
        raise ConfigError(f"total_loss: lambda must be >= 0, got {lam}")
    return as_tensor(forecast_loss) + as_tensor(graph_loss) * float(lam)
