"""
Graph inference: per-variable temporal encoder and pairwise edge generator.
Maps an input window to a learned adjacency over the N variables.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from .config import ConfigError, EdgeKind, EncoderConfig, ModelConfig, parse_edge_kind
from .layers import BatchNorm, Conv1d, Linear, Module
from .tensor import ShapeError, Tensor, as_tensor

logger = logging.getLogger(__name__)


@dataclass
class NodeEmbedding:
    """z of shape (B, N, h), one row per variable per window."""

    z: Tensor
    window_ids: Optional[np.ndarray] = None

    @property
    def window_vectors(self) -> np.ndarray:
        """Node-mean representation of each window, shape (B, h)."""
        return self.z.data.mean(axis=1)


@dataclass
class LearnedGraph:
    """Adjacency of shape (B, N, N). Entry [b, i, j] is the edge i -> j."""

    adjacency: Tensor
    edge_kind: EdgeKind
    window_ids: Optional[np.ndarray] = None

    @property
    def n_vars(self) -> int:
        return self.adjacency.shape[-1]


class TemporalEncoder(Module):
    """
    Per-variable encoder: stacked valid dilated convolutions, batch norm and ReLU,
    flattened and projected to an h-dimensional embedding.

    Input (B, N, T) is processed as B*N independent univariate series.
    """

    def __init__(self, cfg: EncoderConfig, input_len: int, rng: np.random.Generator):
        super().__init__()
        receptive_field = cfg.receptive_field
        if input_len < receptive_field:
            raise ConfigError(
                f"Encoder receptive field {receptive_field} exceeds input length {input_len}"
            )
        self.convs = []
        self.norms = []
        in_channels = 1
        for out_channels, kernel_size in zip(cfg.channels, cfg.kernel_sizes):
            self.convs.append(
                Conv1d(in_channels, out_channels, kernel_size, rng, dilation=cfg.dilation, padding="valid")
            )
            if cfg.batch_norm:
                self.norms.append(BatchNorm(out_channels))
            in_channels = out_channels
        self.out_len = input_len - (receptive_field - 1)
        self.out_channels = in_channels
        self.input_len = input_len
        self.projection = Linear(in_channels * self.out_len, cfg.embedding_dim, rng)

    def forward(self, x: Tensor) -> Tensor:
        b, n, t = x.shape
        if t != self.input_len:
            raise ShapeError(f"TemporalEncoder: expected window length {self.input_len}, got {t}")
        h = x.reshape((b * n, 1, t))
        for i, conv in enumerate(self.convs):
            h = conv(h)
            if self.norms:
                h = self.norms[i](h)
            h = h.relu()
        h = h.reshape((b, n, self.out_channels * self.out_len))
        return self.projection(h)


class EdgeGenerator(Module):
    """
    Two-layer MLP on concatenated node pairs: logit[i, j] = fc2(relu(fc1(z_i || z_j))).

    fc1 is applied as z_i @ W_top + z_j @ W_bottom so all N^2 pairs are scored
    without materializing the concatenation.
    """

    def __init__(self, embedding_dim: int, hidden: int, rng: np.random.Generator):
        super().__init__()
        self.embedding_dim = embedding_dim
        self.fc1 = Linear(2 * embedding_dim, hidden, rng)
        self.fc2 = Linear(hidden, 1, rng)

    def forward(self, z: Tensor) -> Tensor:
        b, n, h = z.shape
        if h != self.embedding_dim:
            raise ShapeError(f"EdgeGenerator: expected embedding width {self.embedding_dim}, got {h}")
        source = z @ self.fc1.weight[:h]
        target = z @ self.fc1.weight[h:]
        hidden = source.shape[-1]
        pairs = source.reshape((b, n, 1, hidden)) + target.reshape((b, 1, n, hidden)) + self.fc1.bias
        logits = pairs.relu() @ self.fc2.weight + self.fc2.bias
        return logits.reshape((b, n, n))


class GraphInference(Module):
    """Temporal encoder followed by the edge generator."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        super().__init__()
        self.edge_kind = cfg.kind
        self.encoder = TemporalEncoder(cfg.encoder, cfg.input_len, rng)
        self.edges = EdgeGenerator(cfg.encoder.embedding_dim, cfg.edge_hidden, rng)

    def encode_nodes(self, x: Union[Tensor, np.ndarray], window_ids: Optional[np.ndarray] = None) -> NodeEmbedding:
        """X of shape (B, N, T) or (N, T) -> NodeEmbedding with z of shape (B, N, h)."""
        x = as_tensor(x)
        if x.ndim == 2:
            x = x.reshape((1,) + x.shape)
        if x.ndim != 3:
            raise ShapeError(f"encode_nodes: expected (B, N, T), got {x.shape}")
        return NodeEmbedding(z=self.encoder(x), window_ids=window_ids)

    def infer_graph(self, embedding: NodeEmbedding, edge_kind: Optional[EdgeKind] = None) -> LearnedGraph:
        """Sigmoid probabilities for binary priors, ReLU weights for continuous priors."""
        kind = self.edge_kind if edge_kind is None else parse_edge_kind(edge_kind)
        logits = self.edges(embedding.z)
        adjacency = logits.sigmoid() if kind is EdgeKind.BINARY else logits.relu()
        return LearnedGraph(adjacency=adjacency, edge_kind=kind, window_ids=embedding.window_ids)

    def forward(self, x, window_ids: Optional[np.ndarray] = None):
        embedding = self.encode_nodes(x, window_ids)
        return embedding, self.infer_graph(embedding)


def binarize(graph: Union[LearnedGraph, Tensor, np.ndarray], threshold: float = 0.5) -> np.ndarray:
    """
    Hard edges from probabilities: 1 where value > threshold, else 0.

    Args:
        graph: Edge probabilities of shape (..., N, N)
        threshold: Strict cut in (0, 1)

    Returns:
        int8 array of the same shape
    """
    if not 0 < threshold < 1:
        raise ConfigError(f"binarize: threshold must lie in (0, 1), got {threshold}")
    if isinstance(graph, LearnedGraph):
        if graph.edge_kind is not EdgeKind.BINARY:
            raise ConfigError("binarize: only binary edge probabilities can be thresholded")
        values = graph.adjacency.data
    elif isinstance(graph, Tensor):
        values = graph.data
    else:
        values = np.asarray(graph, dtype=np.float64)
    return (values > threshold).astype(np.int8)


def mean_graph(graphs: Union[LearnedGraph, np.ndarray, Sequence[np.ndarray]]) -> np.ndarray:
    """Average adjacency over windows, shape (N, N)."""
    if isinstance(graphs, LearnedGraph):
        values = graphs.adjacency.data
    else:
        values = np.asarray(graphs, dtype=np.float64)
    if values.ndim == 2:
        return values.copy()
    if values.ndim != 3 or values.shape[0] == 0:
        raise ShapeError(f"mean_graph: expected (B, N, N) with B > 0, got {values.shape}")
    return values.mean(axis=0)
