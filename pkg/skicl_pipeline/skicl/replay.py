"""
Representation-matching memory construction.

CORAL distance between representation sets, greedy splitting of a regime's
ordered representations into diverse contiguous modes, proportional greedy
sample selection per mode, a random baseline, and the replay memory itself.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .config import ConfigError, ReplayConfig
from .consistency import StructuralKnowledge
from .tensor import ShapeError, no_grad

logger = logging.getLogger(__name__)


# =============================================================================
# TYPES
# =============================================================================


@dataclass
class RepresentationSet:
    """H of shape (n, q), rows ordered by window start."""

    H: np.ndarray
    window_ids: np.ndarray

    def __post_init__(self):
        self.H = np.asarray(self.H, dtype=np.float64)
        self.window_ids = np.asarray(self.window_ids)
        if self.H.ndim != 2 or self.H.shape[0] < 1 or self.H.shape[1] < 1:
            raise ShapeError(f"RepresentationSet: H must be (n>=1, q>=1), got {self.H.shape}")
        if len(self.window_ids) != self.H.shape[0]:
            raise ShapeError(f"RepresentationSet: {len(self.window_ids)} ids for {self.H.shape[0]} rows")
        if np.any(np.diff(self.window_ids) < 0):
            raise ShapeError("RepresentationSet: rows must be ordered by window start")

    def __len__(self) -> int:
        return self.H.shape[0]


@dataclass
class SplitCandidate:
    k: int
    boundaries: List[int]
    objective: float
    feasible: bool


@dataclass
class ModeSplit:
    """Contiguous modes: mode m covers rows [boundaries[m], boundaries[m + 1])."""

    boundaries: List[int]
    objective: float = 0.0
    feasible: bool = True
    candidates: List[SplitCandidate] = field(default_factory=list)

    @property
    def k(self) -> int:
        return len(self.boundaries) - 1

    @property
    def sizes(self) -> List[int]:
        return [b - a for a, b in zip(self.boundaries[:-1], self.boundaries[1:])]

    def modes(self) -> List[range]:
        return [range(a, b) for a, b in zip(self.boundaries[:-1], self.boundaries[1:])]


# =============================================================================
# CORAL
# =============================================================================


def covariance(H: np.ndarray) -> np.ndarray:
    """Unbiased covariance of rows; zero matrix for fewer than two rows."""
    H = np.asarray(H, dtype=np.float64)
    if H.ndim != 2:
        raise ShapeError(f"covariance: expected (n, q), got {H.shape}")
    n, q = H.shape
    if n <= 1:
        return np.zeros((q, q))
    return np.cov(H, rowvar=False, ddof=1).reshape(q, q)


def coral_distance(H_a: np.ndarray, H_b: np.ndarray) -> float:
    """||C_a - C_b||_F^2 / (4 q^2)."""
    H_a = np.asarray(H_a, dtype=np.float64)
    H_b = np.asarray(H_b, dtype=np.float64)
    if H_a.ndim != 2 or H_b.ndim != 2 or H_a.shape[1] != H_b.shape[1]:
        raise ShapeError(f"coral_distance: feature widths differ for {H_a.shape} and {H_b.shape}")
    q = H_a.shape[1]
    diff = covariance(H_a) - covariance(H_b)
    return float(np.sum(diff * diff) / (4.0 * q * q))


# =============================================================================
# MODE SPLITTING
# =============================================================================


def split_objective(H: np.ndarray, boundaries: Sequence[int]) -> float:
    """(1/K) * sum over ordered pairs i != j of D(M_i, M_j)."""
    covs = [covariance(H[a:b]) for a, b in zip(boundaries[:-1], boundaries[1:])]
    k = len(covs)
    if k < 2:
        return 0.0
    q = H.shape[1]
    total = 0.0
    for i in range(k):
        for j in range(i + 1, k):
            diff = covs[i] - covs[j]
            total += 2.0 * float(np.sum(diff * diff)) / (4.0 * q * q)
    return total / k


def candidate_cuts(n: int, n_parts: int) -> List[int]:
    """Even cut points m * n // n_parts for m = 1 .. n_parts - 1."""
    return sorted({m * n // n_parts for m in range(1, n_parts)} - {0, n})


def characterize_modes(
    representations: Union[RepresentationSet, np.ndarray],
    delta1: int = 1,
    delta2: Optional[int] = None,
    max_modes: int = 7,
    n_parts: int = 10,
) -> ModeSplit:
    """
    Split ordered representations into K contiguous modes that are maximally
    different under CORAL.

    Cuts are restricted to the even partition points. Starting from one mode,
    the cut that most increases the objective is added greedily until
    min(max_modes, n_parts - 1) modes exist; every intermediate K is a
    candidate. The best candidate whose mode sizes all satisfy
    delta1 < size < delta2 wins, ties going to smaller K and then to the
    lexicographically smaller boundary list.

    Args:
        representations: (n, q) rows ordered by window start
        delta1, delta2: Exclusive mode-size bounds (delta2 None means n)
        max_modes: Largest K considered
        n_parts: Number of even parts defining candidate cuts

    Returns:
        ModeSplit; K=1 with feasible=False when no candidate qualifies
    """
    H = representations.H if isinstance(representations, RepresentationSet) else np.asarray(representations, dtype=np.float64)
    n = H.shape[0]
    if n_parts < 3:
        raise ConfigError(f"characterize_modes: n_parts must be >= 3, got {n_parts}")
    if n < n_parts:
        raise ConfigError(f"characterize_modes: {n} rows cannot be split into {n_parts} parts")
    upper = n if delta2 is None else delta2
    k_max = min(max_modes, n_parts - 1)

    def feasible(bounds: List[int]) -> bool:
        return all(delta1 < b - a < upper for a, b in zip(bounds[:-1], bounds[1:]))

    cuts = candidate_cuts(n, n_parts)
    chosen: List[int] = []
    candidates: List[SplitCandidate] = []
    for k in range(2, k_max + 1):
        best_cut, best_value = None, -np.inf
        for cut in cuts:
            if cut in chosen:
                continue
            value = split_objective(H, [0] + sorted(chosen + [cut]) + [n])
            if value > best_value + 1e-12:
                best_cut, best_value = cut, value
        if best_cut is None:
            break
        chosen.append(best_cut)
        bounds = [0] + sorted(chosen) + [n]
        candidates.append(SplitCandidate(k=k, boundaries=bounds, objective=best_value, feasible=feasible(bounds)))
        logger.debug(f"Mode split K={k}: boundaries={bounds}, objective={best_value:.6g}")

    best: Optional[SplitCandidate] = None
    for cand in candidates:
        if not cand.feasible:
            continue
        if best is None or cand.objective > best.objective + 1e-12:
            best = cand
        elif abs(cand.objective - best.objective) <= 1e-12 and (cand.k, cand.boundaries) < (best.k, best.boundaries):
            best = cand

    if best is None:
        logger.warning(
            f"No feasible mode split for n={n} (delta1={delta1}, delta2={upper}); using a single mode"
        )
        return ModeSplit(boundaries=[0, n], objective=0.0, feasible=False, candidates=candidates)
    return ModeSplit(boundaries=best.boundaries, objective=best.objective, feasible=True, candidates=candidates)


# =============================================================================
# SAMPLE SELECTION
# =============================================================================


def mode_quotas(sizes: Sequence[int], budget: int) -> List[int]:
    """max(1, floor(budget * |M_k| / n)) per mode, trimmed from the largest quotas to fit the budget."""
    n = sum(sizes)
    quotas = [max(1, (budget * size) // n) for size in sizes]
    quotas = [min(q, size) for q, size in zip(quotas, sizes)]
    while sum(quotas) > budget:
        largest = max(quotas)
        if largest <= 0:
            break
        # later mode wins ties
        index = max(i for i, q in enumerate(quotas) if q == largest)
        quotas[index] -= 1
    return quotas


def select_samples(H: Union[RepresentationSet, np.ndarray], split: ModeSplit, budget: int) -> List[int]:
    """
    Greedy representation matching inside each mode.

    Within a mode, rows are added one at a time, each time taking the row that
    minimizes CORAL between the selected subset and the whole mode (lowest
    index on ties).

    Returns:
        Sorted row indices, at most `budget` of them
    """
    H = H.H if isinstance(H, RepresentationSet) else np.asarray(H, dtype=np.float64)
    n = H.shape[0]
    if budget < 1:
        raise ConfigError(f"select_samples: budget must be >= 1, got {budget}")
    if split.boundaries[0] != 0 or split.boundaries[-1] != n:
        raise ShapeError(f"select_samples: split {split.boundaries} does not cover {n} rows")
    if budget >= n:
        logger.info(f"Budget {budget} covers all {n} windows; selecting everything")
        return list(range(n))

    selected: List[int] = []
    for mode, quota in zip(split.modes(), mode_quotas(split.sizes, budget)):
        target = covariance(H[mode.start:mode.stop])
        chosen: List[int] = []
        remaining = list(mode)
        q = H.shape[1]
        for _ in range(quota):
            best_index, best_value = None, np.inf
            for i in remaining:
                diff = covariance(H[chosen + [i]]) - target
                value = float(np.sum(diff * diff)) / (4.0 * q * q)
                if value < best_value - 1e-15:
                    best_index, best_value = i, value
            chosen.append(best_index)
            remaining.remove(best_index)
        selected.extend(chosen)
    return sorted(selected)


def random_select(window_ids: Sequence[int], budget: int, seed: Union[int, Sequence[int]] = 0) -> List[int]:
    """Uniform sample without replacement; returns the chosen ids in ascending order."""
    ids = np.asarray(window_ids)
    if budget >= len(ids):
        return sorted(ids.tolist())
    rng = np.random.default_rng(seed)
    return sorted(rng.choice(ids, size=budget, replace=False).tolist())


def memory_budget(n_windows: int, ratio: float) -> int:
    """ceil(ratio * n), at least 1."""
    return max(1, math.ceil(ratio * n_windows - 1e-9))


def build_representations(model, windows, batch_size: int = 64) -> RepresentationSet:
    """
    Node-mean of the encoder embedding for every window, ordered by start.

    Runs in eval mode without recording gradients; the previous mode is restored.
    """
    was_training = model.training
    model.eval()
    rows = []
    try:
        with no_grad():
            for start in range(0, len(windows), batch_size):
                batch = windows.inputs[start:start + batch_size]
                rows.append(model.graph.encode_nodes(batch).window_vectors)
    finally:
        model.train(was_training)
    H = np.concatenate(rows, axis=0)
    order = np.argsort(windows.starts, kind="stable")
    return RepresentationSet(H=H[order], window_ids=np.asarray(windows.starts)[order])


# =============================================================================
# MEMORY
# =============================================================================


@dataclass(frozen=True, eq=False)
class MemoryEntry:
    """Selected windows of one past regime together with that regime's prior."""

    regime_id: str
    regime_index: int
    window_ids: np.ndarray
    inputs: np.ndarray
    targets: np.ndarray
    prior: StructuralKnowledge
    budget: int
    modes: Tuple[int, ...] = ()
    selector: str = "ski-cl"

    def __len__(self) -> int:
        return len(self.window_ids)


class MemoryBuffer:
    """Replay memory keyed by regime, in arrival order."""

    def __init__(self):
        self._entries: Dict[str, MemoryEntry] = {}

    def __len__(self) -> int:
        return sum(len(e) for e in self._entries.values())

    def __contains__(self, regime_id: str) -> bool:
        return regime_id in self._entries

    @property
    def entries(self) -> List[MemoryEntry]:
        return list(self._entries.values())

    @property
    def regime_ids(self) -> List[str]:
        return list(self._entries)

    @property
    def n_vars(self) -> Optional[int]:
        for entry in self._entries.values():
            return entry.inputs.shape[1]
        return None

    def is_empty(self) -> bool:
        return len(self) == 0

    def add(self, entry: MemoryEntry) -> None:
        if entry.regime_id in self._entries:
            raise ValueError(f"Memory already holds regime '{entry.regime_id}'")
        if len(entry) > entry.budget:
            raise ValueError(
                f"Memory entry for '{entry.regime_id}' has {len(entry)} windows, budget {entry.budget}"
            )
        if self.n_vars is not None and entry.inputs.shape[1] != self.n_vars:
            raise ShapeError(
                f"Memory entry for '{entry.regime_id}' has {entry.inputs.shape[1]} variables, "
                f"buffer holds {self.n_vars}"
            )
        self._entries[entry.regime_id] = entry
        logger.info(f"Memory: stored {len(entry)} windows for regime '{entry.regime_id}' (total {len(self)})")

    def sample_batch(self, batch_size: int, rng: np.random.Generator):
        """
        Draw `batch_size` stored windows uniformly across the buffer.

        Returns:
            inputs (B, N, T), targets (B, N, H), list of per-window priors
        """
        if self.is_empty():
            raise ValueError("Cannot sample from an empty memory")
        owners = [(entry, i) for entry in self._entries.values() for i in range(len(entry))]
        replace = len(owners) < batch_size
        picks = rng.choice(len(owners), size=batch_size, replace=replace)
        inputs = np.stack([owners[p][0].inputs[owners[p][1]] for p in picks])
        targets = np.stack([owners[p][0].targets[owners[p][1]] for p in picks])
        priors = [owners[p][0].prior for p in picks]
        return inputs, targets, priors

    def to_manifest(self, format_version: str) -> dict:
        return {
            "format_version": format_version,
            "regimes": [
                {
                    "regime_id": e.regime_id,
                    "regime_index": e.regime_index,
                    "selector": e.selector,
                    "budget": e.budget,
                    "selected_window_ids": [int(w) for w in e.window_ids],
                    "modes": list(e.modes),
                }
                for e in self._entries.values()
            ],
        }


@dataclass
class MemorySelection:
    """Rows chosen from a regime's training windows, with the mode split when one was computed."""

    rows: List[int]
    budget: int
    split: Optional[ModeSplit] = None

    @property
    def modes(self) -> Tuple[int, ...]:
        return tuple(self.split.boundaries) if self.split is not None else ()


def select_memory(model, windows, regime_index: int, cfg: ReplayConfig, seed: int = 0, batch_size: int = 64) -> MemorySelection:
    """
    Pick replay windows of one regime with the configured selector.

    Returns:
        MemorySelection with row indices into `windows`; no rows for selector 'none'
    """
    n = len(windows)
    budget = memory_budget(n, cfg.budget_ratio)
    if cfg.selector == "none":
        return MemorySelection(rows=[], budget=budget)
    if cfg.selector == "er":
        ids = random_select(windows.starts, budget, seed=(seed, regime_index))
        lookup = {int(s): i for i, s in enumerate(windows.starts)}
        return MemorySelection(rows=sorted(lookup[i] for i in ids), budget=budget)

    reps = build_representations(model, windows, batch_size)
    order = np.argsort(windows.starts, kind="stable")
    if n < 3:
        logger.warning(f"Only {n} windows; storing all of them")
        return MemorySelection(rows=sorted(order[: min(n, budget)].tolist()), budget=budget)
    n_parts = min(cfg.n_parts, n)
    if n_parts != cfg.n_parts:
        logger.warning(f"n_parts reduced from {cfg.n_parts} to {n_parts} for {n} windows")
    split = characterize_modes(reps, cfg.delta1, cfg.delta2, cfg.max_modes, n_parts)
    rows = select_samples(reps, split, budget)
    logger.info(f"Selected {len(rows)} windows over {split.k} modes (boundaries {split.boundaries})")
    return MemorySelection(rows=sorted(order[rows].tolist()), budget=budget, split=split)
