"""
Data transformations for SKI-CL.
Chronological splits, per-variable z-scoring and sliding-window datasets.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .config import DataValidationError
from .consistency import StructuralKnowledge

logger = logging.getLogger(__name__)


@dataclass
class RegimeData:
    """
    One regime of a multivariate series.

    values has shape (N, T). ground_truth is the synthetic transition matrix,
    when known.
    """

    regime_id: str
    values: np.ndarray
    prior: StructuralKnowledge
    variable_names: List[str] = field(default_factory=list)
    ground_truth: Optional[np.ndarray] = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise DataValidationError(f"Regime '{self.regime_id}': values must be (N, T), got {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise DataValidationError(f"Regime '{self.regime_id}': values contain NaN or Inf")
        if self.prior.n_vars != self.n_vars:
            raise DataValidationError(
                f"Regime '{self.regime_id}': prior is {self.prior.n_vars}x{self.prior.n_vars} "
                f"for {self.n_vars} variables"
            )
        if not self.variable_names:
            self.variable_names = [f"x{i}" for i in range(self.n_vars)]
        if len(self.variable_names) != self.n_vars:
            raise DataValidationError(
                f"Regime '{self.regime_id}': {len(self.variable_names)} names for {self.n_vars} variables"
            )

    @property
    def n_vars(self) -> int:
        return self.values.shape[0]

    @property
    def length(self) -> int:
        return self.values.shape[1]


@dataclass
class WindowSet:
    """Ordered (input, target) windows: inputs (n, N, tau), targets (n, N, horizon)."""

    inputs: np.ndarray
    targets: np.ndarray
    starts: np.ndarray
    regime_id: str = ""

    def __len__(self) -> int:
        return self.inputs.shape[0]

    def subset(self, indices: Sequence[int]) -> "WindowSet":
        idx = np.asarray(indices, dtype=int)
        return WindowSet(self.inputs[idx], self.targets[idx], self.starts[idx], self.regime_id)


@dataclass
class ZScore:
    """Per-variable affine scaler with mean/std of shape (N, 1)."""

    mean: np.ndarray
    std: np.ndarray

    def apply(self, values: np.ndarray) -> np.ndarray:
        return (values - self.mean) / self.std

    def invert(self, values: np.ndarray) -> np.ndarray:
        """Undo scaling on (..., N, T) arrays."""
        return values * self.std + self.mean


def fit_zscore(train_values: np.ndarray) -> ZScore:
    """Statistics from the train split only; zero std becomes 1."""
    mean = train_values.mean(axis=1, keepdims=True)
    std = train_values.std(axis=1, keepdims=True)
    flat = np.where(std == 0)[0]
    if len(flat):
        logger.warning(f"Zero-variance variables {flat.tolist()} in train split; std set to 1")
    std = np.where(std == 0, 1.0, std)
    return ZScore(mean=mean, std=std)


def split_by_time(values: np.ndarray, ratios: Tuple[float, float, float] = (0.6, 0.2, 0.2)):
    """
    Chronological train/val/test split along time.

    Returns:
        (train, val, test) arrays and the start offsets of each part
    """
    length = values.shape[1]
    n_train = int(length * ratios[0])
    n_val = int(length * ratios[1])
    offsets = (0, n_train, n_train + n_val)
    parts = (
        values[:, :n_train],
        values[:, n_train:n_train + n_val],
        values[:, n_train + n_val:],
    )
    return parts, offsets


def window_dataset(
    values: np.ndarray,
    input_len: int,
    horizon: int,
    stride: int = 1,
    offset: int = 0,
    regime_id: str = "",
) -> WindowSet:
    """
    Slice an (N, T) series into consecutive (input, target) windows.

    Window k covers input steps [s, s + input_len) and target steps
    [s + input_len, s + input_len + horizon) with s = k * stride.

    Args:
        values: Series of shape (N, T)
        input_len: History length tau
        horizon: Forecast length
        stride: Step between window starts
        offset: Added to window starts so ids stay unique across splits
        regime_id: Attached to the resulting set

    Returns:
        WindowSet with floor((T - tau - horizon) / stride) + 1 windows
    """
    values = np.asarray(values, dtype=np.float64)
    span = input_len + horizon
    if stride < 1:
        raise DataValidationError(f"window_dataset: stride must be >= 1, got {stride}")
    if values.shape[1] < span:
        raise DataValidationError(
            f"window_dataset: series of length {values.shape[1]} shorter than "
            f"input_len + horizon = {span}"
        )
    windows = np.lib.stride_tricks.sliding_window_view(values, span, axis=1)[:, ::stride]
    windows = np.ascontiguousarray(windows.transpose(1, 0, 2))
    starts = np.arange(windows.shape[0]) * stride + offset
    return WindowSet(
        inputs=windows[:, :, :input_len].copy(),
        targets=windows[:, :, input_len:].copy(),
        starts=starts,
        regime_id=regime_id,
    )


@dataclass
class PreparedRegime:
    """Normalized, windowed splits of one regime ready for training."""

    regime_id: str
    index: int
    train: WindowSet
    val: WindowSet
    test: WindowSet
    scaler: ZScore
    prior: StructuralKnowledge
    ground_truth: Optional[np.ndarray] = None

    @property
    def n_vars(self) -> int:
        return self.train.inputs.shape[1]


def prepare_regime(
    regime: RegimeData,
    index: int,
    input_len: int,
    horizon: int,
    ratios: Tuple[float, float, float] = (0.6, 0.2, 0.2),
    stride: int = 1,
) -> PreparedRegime:
    """Split by time, z-score with train statistics, and window every split."""
    (train, val, test), offsets = split_by_time(regime.values, ratios)
    span = input_len + horizon
    for name, part in zip(("train", "val", "test"), (train, val, test)):
        if part.shape[1] < span:
            raise DataValidationError(
                f"Regime '{regime.regime_id}': {name} split has {part.shape[1]} steps, "
                f"needs at least {span}"
            )
    scaler = fit_zscore(train)
    sets = [
        window_dataset(scaler.apply(part), input_len, horizon, stride, offset, regime.regime_id)
        for part, offset in zip((train, val, test), offsets)
    ]
    logger.info(
        f"Regime '{regime.regime_id}': {len(sets[0])} train / {len(sets[1])} val / {len(sets[2])} test windows"
    )
    return PreparedRegime(
        regime_id=regime.regime_id,
        index=index,
        train=sets[0],
        val=sets[1],
        test=sets[2],
        scaler=scaler,
        prior=regime.prior,
        ground_truth=regime.ground_truth,
    )
