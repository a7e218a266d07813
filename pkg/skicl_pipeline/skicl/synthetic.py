"""
Synthetic regime generator and structural-knowledge constructors.
"""

import logging
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from .config import ConfigError, DataValidationError, EdgeKind, SyntheticConfig
from .consistency import StructuralKnowledge
from .transforms import RegimeData, split_by_time

logger = logging.getLogger(__name__)

# Initial values are drawn from this set
INITIAL_VALUES = (-1.0, -0.5, 0.5, 1.0)

MAX_ADJACENCY_ATTEMPTS = 100
MIN_PRIOR_STEPS = 30

# Percentile-mode defaults for partially observed priors
PERCENTILE_SEGMENT_LENGTH = 64
PERCENTILE = 15.0


# =============================================================================
# RANDOM WALK
# =============================================================================


def random_adjacency(n_vars: int, sparsity: float, rng: np.random.Generator) -> np.ndarray:
    """Symmetric 0/1 adjacency, zero diagonal, edges i.i.d. Bernoulli(sparsity)."""
    for _ in range(MAX_ADJACENCY_ATTEMPTS):
        upper = np.triu(rng.random((n_vars, n_vars)) < sparsity, k=1)
        adjacency = (upper | upper.T).astype(np.float64)
        if adjacency.any():
            return adjacency
    raise DataValidationError(
        f"Could not draw a non-empty graph with sparsity {sparsity} in {MAX_ADJACENCY_ATTEMPTS} attempts"
    )


def transition_matrix(adjacency: np.ndarray, spectral_radius: float = 0.9) -> np.ndarray:
    """
    Random-walk Laplacian I - D^-1 A rescaled to the given spectral radius.

    Isolated nodes keep an identity row.
    """
    degree = adjacency.sum(axis=1)
    inv_degree = np.divide(1.0, degree, out=np.zeros_like(degree), where=degree > 0)
    laplacian = np.eye(adjacency.shape[0]) - inv_degree[:, None] * adjacency
    rho = float(np.max(np.abs(np.linalg.eigvals(laplacian))))
    if rho == 0:
        return laplacian
    return spectral_radius * laplacian / rho


def simulate_random_walk(
    transitions: Sequence[np.ndarray],
    regime_length: int,
    noise_std: float,
    rng: np.random.Generator,
    x0: Optional[np.ndarray] = None,
    clip_value: float = 10.0,
) -> np.ndarray:
    """
    x[t] = G_r x[t-1] + N(0, noise_std), r = regime of step t.

    The state carries over regime boundaries without re-initialization.

    Returns:
        Series of shape (N, len(transitions) * regime_length)
    """
    n_vars = transitions[0].shape[0]
    total = len(transitions) * regime_length
    if x0 is None:
        x0 = rng.choice(INITIAL_VALUES, size=n_vars)
    values = np.empty((n_vars, total))
    state = np.asarray(x0, dtype=np.float64)
    for t in range(total):
        regime = min(t // regime_length, len(transitions) - 1)
        state = transitions[regime] @ state + rng.normal(0.0, noise_std, size=n_vars)
        state = np.clip(state, -clip_value, clip_value)
        values[:, t] = state
    return values


# =============================================================================
# PRIORS
# =============================================================================


def gaussian_kernel_adjacency(
    distances: np.ndarray,
    sigma: float,
    threshold: float = np.inf,
    regime_id: str = "",
) -> StructuralKnowledge:
    """
    A_ij = exp(-d_ij^2 / sigma^2) for i != j with d_ij <= threshold, else 0.
    """
    if sigma <= 0:
        raise ConfigError(f"gaussian_kernel_adjacency: sigma must be > 0, got {sigma}")
    d = np.asarray(distances, dtype=np.float64)
    if d.ndim != 2 or d.shape[0] != d.shape[1]:
        raise DataValidationError(f"Distance matrix must be square, got {d.shape}")
    if np.any(d < 0):
        raise DataValidationError("Distance matrix has negative entries")
    adjacency = np.where(d <= threshold, np.exp(-(d ** 2) / sigma ** 2), 0.0)
    np.fill_diagonal(adjacency, 0.0)
    return StructuralKnowledge(adjacency=adjacency, edge_kind=EdgeKind.CONTINUOUS, regime_id=regime_id)


def threshold_prior(
    weights: Union[StructuralKnowledge, np.ndarray], threshold: float, regime_id: str = ""
) -> StructuralKnowledge:
    """Binary prior from a continuous one: 1 where weight > threshold. A prior keeps its mask."""
    mask = None
    if isinstance(weights, StructuralKnowledge):
        mask = weights.mask
        regime_id = regime_id or weights.regime_id
        weights = weights.adjacency
    w = np.asarray(weights, dtype=np.float64)
    return StructuralKnowledge(
        adjacency=(w > threshold).astype(np.float64), edge_kind=EdgeKind.BINARY, mask=mask, regime_id=regime_id
    )


def pearson_matrix(values: np.ndarray) -> Tuple[np.ndarray, List[int]]:
    """Pearson correlation of rows; zero-variance rows get correlation 0 off the diagonal."""
    values = np.asarray(values, dtype=np.float64)
    flat = [int(i) for i in np.where(np.ptp(values, axis=1) == 0)[0]]
    with np.errstate(invalid="ignore", divide="ignore"):
        corr = np.atleast_2d(np.corrcoef(values))
    corr[flat, :] = 0.0
    corr[:, flat] = 0.0
    np.fill_diagonal(corr, 1.0)
    return corr, flat


def extract_correlation_prior(
    values: np.ndarray,
    threshold: float = 0.5,
    percentile_mode: bool = False,
    segment_length: int = PERCENTILE_SEGMENT_LENGTH,
    percentile: float = PERCENTILE,
    mask_threshold: Optional[float] = None,
    regime_id: str = "",
) -> StructuralKnowledge:
    """
    Binary prior from strong absolute Pearson correlations.

    A_ij = 1 iff |corr(x_i, x_j)| > threshold for i != j; A_ii = 1.

    In percentile mode the series is cut into non-overlapping segments and an
    entry is observed only when the low percentile of its per-segment absolute
    correlation exceeds mask_threshold. The diagonal is always observed.

    Args:
        values: Train split of shape (N, T), T >= 30
        threshold: Edge cut in (0, 1)
        percentile_mode: Emit a partial mask instead of M = 1
        segment_length: Steps per segment in percentile mode
        percentile: Low percentile checked in percentile mode
        mask_threshold: Confidence cut for the mask (defaults to threshold)
        regime_id: Attached to the prior

    Returns:
        StructuralKnowledge of binary kind
    """
    values = np.asarray(values, dtype=np.float64)
    if not 0 < threshold < 1:
        raise ConfigError(f"extract_correlation_prior: threshold must lie in (0, 1), got {threshold}")
    if values.ndim != 2 or values.shape[1] < MIN_PRIOR_STEPS:
        raise DataValidationError(
            f"extract_correlation_prior: needs at least {MIN_PRIOR_STEPS} steps, got shape {values.shape}"
        )
    corr, flat = pearson_matrix(values)
    if flat:
        logger.warning(f"Zero-variance variables {flat} in regime '{regime_id}'; correlations set to 0")
    adjacency = (np.abs(corr) > threshold).astype(np.float64)
    np.fill_diagonal(adjacency, 1.0)

    mask = np.ones_like(adjacency)
    if percentile_mode:
        cut = threshold if mask_threshold is None else mask_threshold
        n_segments = values.shape[1] // segment_length
        if n_segments < 2:
            logger.warning(
                f"Regime '{regime_id}': {values.shape[1]} steps give fewer than 2 segments "
                f"of {segment_length}; prior left fully observed"
            )
        else:
            segments = np.stack([
                np.abs(pearson_matrix(values[:, s * segment_length:(s + 1) * segment_length])[0])
                for s in range(n_segments)
            ])
            low = np.percentile(segments, percentile, axis=0)
            mask = (low > cut).astype(np.float64)
            np.fill_diagonal(mask, 1.0)
            logger.info(
                f"Regime '{regime_id}': percentile mask observes {int(mask.sum())}/{mask.size} entries"
            )
    return StructuralKnowledge(adjacency=adjacency, edge_kind=EdgeKind.BINARY, mask=mask, regime_id=regime_id)


# =============================================================================
# GENERATOR
# =============================================================================


def generate_synthetic(cfg: SyntheticConfig, split_ratios: Tuple[float, float, float] = (0.6, 0.2, 0.2)) -> List[RegimeData]:
    """
    Non-repeating random walk with one sparse dependency graph per regime.

    Each regime's prior is the correlation-threshold prior of its own train split.

    Args:
        cfg: Generator settings
        split_ratios: Used to locate the train split for prior extraction

    Returns:
        One RegimeData per regime, in order
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    adjacencies = [random_adjacency(cfg.n_vars, cfg.sparsity, rng) for _ in range(cfg.n_regimes)]
    transitions = [transition_matrix(a, cfg.spectral_radius) for a in adjacencies]
    length = cfg.regime_length
    values = simulate_random_walk(transitions, length, cfg.noise_std, rng, clip_value=cfg.clip_value)
    logger.info(
        f"Generated {cfg.n_regimes} regimes of {length} steps over {cfg.n_vars} variables "
        f"(sparsity={cfg.sparsity}, noise={cfg.noise_std})"
    )

    regimes = []
    for i, transition in enumerate(transitions):
        regime_id = f"regime_{i + 1}"
        segment = values[:, i * length:(i + 1) * length]
        (train, _, _), _ = split_by_time(segment, split_ratios)
        prior = extract_correlation_prior(train, cfg.prior_threshold, regime_id=regime_id)
        regimes.append(
            RegimeData(
                regime_id=regime_id,
                values=segment,
                prior=prior,
                variable_names=[f"x{j}" for j in range(cfg.n_vars)],
                ground_truth=transition,
            )
        )
    return regimes
