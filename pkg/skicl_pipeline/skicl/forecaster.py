"""
Graph-based forecaster: temporal graph convolution blocks over a learned adjacency.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Tuple, Union

import numpy as np

from .config import ConfigError, ModelConfig, TgconvConfig
from .graph import GraphInference, LearnedGraph, NodeEmbedding
from .layers import Conv1d, Linear, Module, uniform_init
from .tensor import ShapeError, Tensor, as_tensor, sum_squared_error

logger = logging.getLogger(__name__)


def message_passing(adjacency: Tensor, r: Tensor, w_self: Tensor, w_neigh: Tensor) -> Tensor:
    """
    One message-passing step with edge weights taken from the adjacency.

    out_i = r_i @ w_self + (sum_j adjacency[j, i] * r_j) @ w_neigh

    Args:
        adjacency: (..., N, N), entry [j, i] weights the message j -> i
        r: Node features (..., N, C)
        w_self, w_neigh: (C, C')

    Returns:
        Tensor of shape (..., N, C')
    """
    adjacency, r = as_tensor(adjacency), as_tensor(r)
    n = r.shape[-2]
    if adjacency.shape[-2:] != (n, n):
        raise ShapeError(f"message_passing: adjacency {adjacency.shape} does not match features {r.shape}")
    if w_self.shape != w_neigh.shape or w_self.shape[0] != r.shape[-1]:
        raise ShapeError(
            f"message_passing: weights {w_self.shape}/{w_neigh.shape} incompatible with features {r.shape}"
        )
    axes = tuple(range(adjacency.ndim - 2)) + (adjacency.ndim - 1, adjacency.ndim - 2)
    incoming = adjacency.transpose(axes) @ r
    return r @ w_self + incoming @ w_neigh


class TGConvBlock(Module):
    """
    Causal dilated convolution per variable, ReLU, message passing at every
    time step, plus a residual connection (1x1 projection when widths differ).
    """

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel_size: int,
        dilation: int,
        rng: np.random.Generator,
        residual_projection: bool = True,
    ):
        super().__init__()
        self.temporal = Conv1d(in_channels, out_channels, kernel_size, rng, dilation=dilation, padding="causal")
        self.w_self = uniform_init(rng, (out_channels, out_channels), out_channels)
        self.w_neigh = uniform_init(rng, (out_channels, out_channels), out_channels)
        if in_channels != out_channels:
            if not residual_projection:
                raise ConfigError(
                    f"TGConvBlock: {in_channels} -> {out_channels} channels needs a residual projection"
                )
            self.residual = Conv1d(in_channels, out_channels, 1, rng, padding="causal")
        else:
            self.residual = None
        self.out_channels = out_channels

    def forward(self, h: Tensor, adjacency: Tensor) -> Tensor:
        """h (B, N, C, T), adjacency (B, N, N) -> (B, N, C', T)."""
        b, n, c, t = h.shape
        flat = h.reshape((b * n, c, t))
        r = self.temporal(flat).relu()
        r = r.reshape((b, n, self.out_channels, t)).transpose((0, 3, 1, 2))
        mixed = message_passing(adjacency.reshape((b, 1, n, n)), r, self.w_self, self.w_neigh)
        mixed = mixed.transpose((0, 2, 3, 1))
        if self.residual is None:
            return mixed + h
        return mixed + self.residual(flat).reshape((b, n, self.out_channels, t))


class Forecaster(Module):
    """TGConv stack followed by a regressor shared across variables."""

    def __init__(self, cfg: TgconvConfig, input_len: int, horizon: int, rng: np.random.Generator):
        super().__init__()
        if cfg.receptive_field > input_len:
            raise ConfigError(
                f"TGConv receptive field {cfg.receptive_field} exceeds input length {input_len}"
            )
        self.blocks = []
        in_channels = 1
        for dilation in cfg.dilations:
            self.blocks.append(
                TGConvBlock(in_channels, cfg.channels, cfg.kernel_size, dilation, rng, cfg.residual_projection)
            )
            in_channels = cfg.channels
        self.channels = cfg.channels
        self.input_len = input_len
        self.regressor = Linear(cfg.channels * input_len, horizon, rng)

    def forward(self, x: Tensor, adjacency: Tensor) -> Tensor:
        """x (B, N, T), adjacency (B, N, N) -> forecasts (B, N, horizon)."""
        b, n, t = x.shape
        if adjacency.shape != (b, n, n):
            raise ShapeError(f"Forecaster: adjacency {adjacency.shape} does not match input {x.shape}")
        h = x.reshape((b, n, 1, t))
        for block in self.blocks:
            h = block(h, adjacency)
        return self.regressor(h.reshape((b, n, self.channels * t)))


@dataclass
class ForecastOutput:
    prediction: Tensor
    graph: LearnedGraph
    embedding: NodeEmbedding


class SkiclModel(Module):
    """Graph inference and forecaster; the same adjacency feeds every TGConv block."""

    def __init__(self, cfg: ModelConfig, seed: Union[int, Tuple[int, ...]] = 0):
        super().__init__()
        if cfg.n_vars is None:
            raise ConfigError("SkiclModel: model.n_vars must be resolved before building the model")
        cfg.validate()
        self.config = cfg
        rng = np.random.default_rng(seed)
        self.graph = GraphInference(cfg, rng)
        self.forecaster = Forecaster(cfg.tgconv, cfg.input_len, cfg.horizon, rng)

    def _check_input(self, x: Tensor) -> Tensor:
        if x.ndim == 2:
            x = x.reshape((1,) + x.shape)
        if x.ndim != 3:
            raise ShapeError(f"SkiclModel: expected input (B, N, T), got {x.shape}")
        if x.shape[1] != self.config.n_vars:
            raise ShapeError(
                f"SkiclModel: input has {x.shape[1]} variables, model built for {self.config.n_vars}"
            )
        return x

    def forecast(self, x, adjacency) -> Tensor:
        x = self._check_input(as_tensor(x))
        return self.forecaster(x, as_tensor(adjacency))

    def forward(self, x, window_ids: Optional[np.ndarray] = None) -> ForecastOutput:
        x = self._check_input(as_tensor(x))
        embedding, graph = self.graph(x, window_ids)
        prediction = self.forecaster(x, graph.adjacency)
        return ForecastOutput(prediction=prediction, graph=graph, embedding=embedding)


def forecasting_loss(prediction: Tensor, target) -> Tensor:
    """Sum of squared errors over (B, N, horizon) divided by horizon * B."""
    prediction, target = as_tensor(prediction), as_tensor(target)
    if prediction.shape != target.shape:
        raise ShapeError(f"forecasting_loss: prediction {prediction.shape} vs target {target.shape}")
    horizon = prediction.shape[-1]
    batch = int(np.prod(prediction.shape[:-2])) if prediction.ndim > 2 else 1
    return sum_squared_error(prediction, target) / float(horizon * batch)
