"""
Sequential per-regime training with structural consistency and memory replay.
"""

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .config import (
    BINARY_STRUCTURE_METRICS,
    CONTINUOUS_STRUCTURE_METRICS,
    FORECAST_METRICS,
    GROUND_TRUTH_METRICS,
    RAW_FORECAST_METRICS,
    ConfigError,
    EdgeKind,
    ModelConfig,
    ReplayConfig,
    TrainerConfig,
)
from .consistency import StructuralKnowledge, consistency_loss, total_loss
from .forecaster import SkiclModel, forecasting_loss
from .graph import binarize
from .metrics import build_metric_report, mae, precision_recall, rmse, structure_error
from .optim import Adam, step_lr
from .replay import MemoryBuffer, MemoryEntry, select_memory
from .tensor import no_grad
from .transforms import PreparedRegime, WindowSet

logger = logging.getLogger(__name__)


class RegimeTrainingError(RuntimeError):
    """Training or evaluation failed inside a regime."""

    def __init__(self, regime_id: str, cause: BaseException):
        super().__init__(f"Regime '{regime_id}' failed: {cause}")
        self.regime_id = regime_id
        self.cause = cause


# =============================================================================
# RESULT TYPES
# =============================================================================


@dataclass
class EpochRecord:
    regime_id: str
    epoch: int
    loss_forecast: float
    loss_graph: float
    loss_memory: float
    lr: float
    val_mae: float


@dataclass
class TrainReport:
    regime_id: str
    history: List[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    best_val_mae: float = float("inf")
    stopped_early: bool = False


@dataclass
class RegimeEvaluation:
    """Test-set metrics of one regime under the current model."""

    regime_id: str
    metrics: Dict[str, float]
    mean_graph: np.ndarray
    window_structure: pd.DataFrame
    graphs: Optional[np.ndarray] = None
    predictions: Optional[np.ndarray] = None
    targets: Optional[np.ndarray] = None
    window_ids: Optional[np.ndarray] = None


def metric_names(edge_kind: EdgeKind, has_ground_truth: bool = False, raw_scale: bool = True) -> List[str]:
    names = list(FORECAST_METRICS)
    if raw_scale:
        names += RAW_FORECAST_METRICS
    if edge_kind is EdgeKind.BINARY:
        names += BINARY_STRUCTURE_METRICS
        if has_ground_truth:
            names += GROUND_TRUTH_METRICS
    else:
        names += CONTINUOUS_STRUCTURE_METRICS
    return names


class PerformanceMatrix:
    """Lower-triangular P[i][j] per metric: model after regime i, tested on regime j."""

    def __init__(self, regime_ids: Sequence[str], metrics: Sequence[str]):
        self.regime_ids = list(regime_ids)
        self.metrics = list(metrics)
        size = len(self.regime_ids)
        self.matrices: Dict[str, np.ndarray] = {m: np.full((size, size), np.nan) for m in self.metrics}

    @property
    def size(self) -> int:
        return len(self.regime_ids)

    def record(self, i: int, j: int, values: Dict[str, float]) -> None:
        """0-based i (trained through) and j (evaluated), j <= i."""
        if j > i:
            raise ValueError(f"P[{i}][{j}] lies above the diagonal")
        for metric in self.metrics:
            if metric in values:
                self.matrices[metric][i, j] = values[metric]

    def value(self, i: int, j: int, metric: str) -> float:
        return float(self.matrices[metric][i, j])

    def filled(self, metric: str) -> int:
        return int(np.sum(~np.isnan(self.matrices[metric])))

    def to_frame(self, metric: str) -> pd.DataFrame:
        return pd.DataFrame(
            self.matrices[metric],
            index=[f"after_{r}" for r in self.regime_ids],
            columns=self.regime_ids,
        )

    def summary(self) -> Dict[str, Dict]:
        return build_metric_report(self.matrices, self.regime_ids)


@dataclass
class RegimeOutcome:
    """Everything known when a regime finishes; passed to the end-of-regime callback."""

    index: int
    regime: PreparedRegime
    model: SkiclModel
    memory: MemoryBuffer
    performance: PerformanceMatrix
    report: TrainReport
    evaluations: List[RegimeEvaluation]
    regime_ids: List[str]


@dataclass
class SequenceResult:
    performance: PerformanceMatrix
    reports: List[TrainReport]
    memory: MemoryBuffer
    mean_graphs: Dict[Tuple[int, int], np.ndarray]
    model: SkiclModel

    def history_frame(self) -> pd.DataFrame:
        rows = [vars(r) for report in self.reports for r in report.history]
        return pd.DataFrame(rows)


# =============================================================================
# TRAINING
# =============================================================================


def batch_loss(model: SkiclModel, inputs: np.ndarray, targets: np.ndarray, priors, lam: float):
    """
    Forecast + consistency objective on one batch.

    Returns:
        (total, L_F, L_G) tensors
    """
    output = model(inputs)
    l_f = forecasting_loss(output.prediction, targets)
    l_g = consistency_loss(output.graph, priors)
    return total_loss(l_f, l_g, lam), l_f, l_g


def iterate_batches(n: int, batch_size: int, rng: np.random.Generator) -> List[np.ndarray]:
    order = rng.permutation(n)
    return [order[s:s + batch_size] for s in range(0, n, batch_size)]


def predict(model: SkiclModel, windows: WindowSet, batch_size: int = 64) -> Tuple[np.ndarray, np.ndarray]:
    """Forecasts and learned graphs for every window, eval mode, no memory access."""
    was_training = model.training
    model.eval()
    preds, graphs = [], []
    try:
        with no_grad():
            for s in range(0, len(windows), batch_size):
                out = model(windows.inputs[s:s + batch_size])
                preds.append(out.prediction.data)
                graphs.append(out.graph.adjacency.data)
    finally:
        model.train(was_training)
    return np.concatenate(preds), np.concatenate(graphs)


def train_regime(
    model: SkiclModel,
    regime: PreparedRegime,
    memory: Optional[MemoryBuffer],
    cfg: TrainerConfig,
) -> TrainReport:
    """
    Train on one regime, replaying memory when present.

    Each step draws a current batch and, with a non-empty memory and alpha > 0,
    an equal-size memory batch whose windows keep their own regime's prior:
    L = L_current + alpha * L_memory. Adam and the learning-rate schedule start
    fresh; the best validation-MAE weights are restored at the end.
    """
    if len(regime.train) == 0:
        raise ConfigError(f"Regime '{regime.regime_id}' has no training windows")
    if regime.n_vars != model.config.n_vars:
        raise ConfigError(
            f"Regime '{regime.regime_id}' has {regime.n_vars} variables, model expects {model.config.n_vars}"
        )
    use_memory = memory is not None and not memory.is_empty() and cfg.alpha > 0
    if use_memory and memory.n_vars != regime.n_vars:
        raise ConfigError(
            f"Memory windows have {memory.n_vars} variables, regime '{regime.regime_id}' has {regime.n_vars}"
        )

    rng = np.random.default_rng([cfg.seed, regime.index])
    memory_rng = np.random.default_rng([cfg.seed, regime.index, 1])
    optimizer = Adam(model.named_parameters(), lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.adam_eps)
    report = TrainReport(regime_id=regime.regime_id)
    best_state = model.state_dict()
    wait = 0

    for epoch in range(cfg.epochs):
        optimizer.lr = step_lr(epoch, cfg.lr, cfg.lr_decay, cfg.lr_step_epochs)
        model.train()
        sums = np.zeros(3)
        batches = iterate_batches(len(regime.train), cfg.batch_size, rng)
        for idx in batches:
            optimizer.zero_grad()
            objective, l_f, l_g = batch_loss(
                model, regime.train.inputs[idx], regime.train.targets[idx], regime.prior, cfg.lam
            )
            if use_memory:
                mem_inputs, mem_targets, mem_priors = memory.sample_batch(len(idx), memory_rng)
                l_mem, _, _ = batch_loss(model, mem_inputs, mem_targets, mem_priors, cfg.lam)
                objective = objective + l_mem * cfg.alpha
                sums[2] += l_mem.item()
            objective.backward()
            optimizer.step()
            sums[0] += l_f.item()
            sums[1] += l_g.item()
        sums /= len(batches)

        val_preds, _ = predict(model, regime.val, cfg.eval_batch_size)
        val_mae = mae(regime.val.targets, val_preds)
        record = EpochRecord(regime.regime_id, epoch + 1, sums[0], sums[1], sums[2], optimizer.lr, val_mae)
        report.history.append(record)
        logger.info(
            f"regime={regime.regime_id} epoch={epoch + 1} L_F={sums[0]:.6f} L_G={sums[1]:.6f} "
            f"L_memory={sums[2]:.6f} lr={optimizer.lr:.3g} val_MAE={val_mae:.6f}"
        )

        if val_mae < report.best_val_mae:
            report.best_val_mae = val_mae
            report.best_epoch = epoch + 1
            best_state = model.state_dict()
            wait = 0
        else:
            wait += 1
            if wait >= cfg.patience:
                report.stopped_early = True
                logger.info(f"Early stop at epoch {epoch + 1}; best epoch {report.best_epoch}")
                break

    model.load_state_dict(best_state)
    return report


# =============================================================================
# EVALUATION
# =============================================================================


def evaluate_regime(
    model: SkiclModel,
    regime: PreparedRegime,
    cfg: TrainerConfig,
    keep_outputs: bool = False,
) -> RegimeEvaluation:
    """
    Test-set metrics of one regime; depends only on the model and the test data.
    """
    preds, graphs = predict(model, regime.test, cfg.eval_batch_size)
    targets = regime.test.targets
    metrics = {"mae": mae(targets, preds), "rmse": rmse(targets, preds)}
    if cfg.report_raw_scale:
        raw_true = regime.scaler.invert(targets)
        raw_pred = regime.scaler.invert(preds)
        metrics["mae_raw"] = mae(raw_true, raw_pred)
        metrics["rmse_raw"] = rmse(raw_true, raw_pred)

    rows = []
    degenerate = 0
    kind = regime.prior.edge_kind
    truth = None
    if regime.ground_truth is not None and kind is EdgeKind.BINARY:
        support = (np.abs(regime.ground_truth) > 0).astype(np.float64)
        np.fill_diagonal(support, 1.0)
        truth = StructuralKnowledge(adjacency=support, edge_kind=EdgeKind.BINARY, regime_id=regime.regime_id)

    for w, window_id in enumerate(regime.test.starts):
        row = {"regime_id": regime.regime_id, "window_id": int(window_id)}
        if kind is EdgeKind.BINARY:
            hard = binarize(graphs[w], cfg.threshold)
            p, r = precision_recall(hard, regime.prior, warn=False)
            degenerate += int(not hard[~np.eye(len(hard), dtype=bool)].any())
            row.update(precision=p, recall=r)
            if truth is not None:
                gp, gr = precision_recall(hard, truth, warn=False)
                row.update(gt_precision=gp, gt_recall=gr)
        else:
            g_mae, g_rmse = structure_error(graphs[w], regime.prior)
            row.update(graph_mae=g_mae, graph_rmse=g_rmse)
        rows.append(row)
    window_structure = pd.DataFrame(rows)
    for column in window_structure.columns[2:]:
        metrics[column] = float(window_structure[column].mean())
    if degenerate:
        logger.warning(
            f"Regime '{regime.regime_id}': {degenerate}/{len(rows)} test windows have no predicted edges"
        )

    return RegimeEvaluation(
        regime_id=regime.regime_id,
        metrics=metrics,
        mean_graph=graphs.mean(axis=0),
        window_structure=window_structure,
        graphs=graphs if keep_outputs else None,
        predictions=preds if keep_outputs else None,
        targets=targets if keep_outputs else None,
        window_ids=regime.test.starts if keep_outputs else None,
    )


# =============================================================================
# MEMORY UPDATE
# =============================================================================


def update_memory(
    model: SkiclModel,
    regime: PreparedRegime,
    memory: MemoryBuffer,
    replay_cfg: ReplayConfig,
    trainer_cfg: TrainerConfig,
) -> Optional[MemoryEntry]:
    """Select replay windows of a finished regime and store them with its prior."""
    if replay_cfg.selector == "none":
        return None
    selection = select_memory(
        model, regime.train, regime.index, replay_cfg, seed=trainer_cfg.seed, batch_size=trainer_cfg.eval_batch_size
    )
    chosen = regime.train.subset(selection.rows)
    entry = MemoryEntry(
        regime_id=regime.regime_id,
        regime_index=regime.index,
        window_ids=chosen.starts.copy(),
        inputs=chosen.inputs,
        targets=chosen.targets,
        prior=regime.prior,
        budget=selection.budget,
        modes=tuple(int(m) for m in selection.modes),
        selector=replay_cfg.selector,
    )
    memory.add(entry)
    return entry


# =============================================================================
# SEQUENCE
# =============================================================================


def run_sequence(
    regimes: Sequence[PreparedRegime],
    model_cfg: ModelConfig,
    trainer_cfg: TrainerConfig,
    replay_cfg: ReplayConfig,
    on_regime_end: Optional[Callable[[RegimeOutcome], None]] = None,
    model: Optional[SkiclModel] = None,
) -> SequenceResult:
    """
    Train regimes in order, evaluating on every seen regime after each one.

    Args:
        regimes: Prepared regimes sharing N
        model_cfg: Model geometry; n_vars is filled from the data when unset
        trainer_cfg: Optimization settings
        replay_cfg: Selector and budget
        on_regime_end: Called after evaluation and memory update of each regime
        model: Optional pre-built model

    Returns:
        SequenceResult with the filled performance matrix
    """
    if not regimes:
        raise ConfigError("run_sequence: no regimes given")
    n_vars = {r.n_vars for r in regimes}
    if len(n_vars) != 1:
        raise ConfigError(f"All regimes must share the number of variables, got {sorted(n_vars)}")
    kinds = {r.prior.edge_kind for r in regimes}
    if len(kinds) != 1:
        raise ConfigError(f"All regimes must share the prior edge kind, got {sorted(k.value for k in kinds)}")
    for r in regimes:
        if len(r.train) == 0:
            raise ConfigError(f"Regime '{r.regime_id}' has no training windows")

    if model is None:
        if model_cfg.n_vars is None:
            model_cfg = replace(model_cfg, n_vars=n_vars.pop())
        model = SkiclModel(model_cfg, seed=trainer_cfg.seed)
    if model.config.kind not in kinds:
        raise ConfigError(
            f"Model edge kind '{model.config.kind.value}' does not match prior kind '{next(iter(kinds)).value}'"
        )
    logger.info(f"Model: {model.num_parameters()} parameters, selector={replay_cfg.selector}")

    regime_ids = [r.regime_id for r in regimes]
    has_truth = all(r.ground_truth is not None for r in regimes)
    performance = PerformanceMatrix(
        regime_ids, metric_names(model.config.kind, has_truth, trainer_cfg.report_raw_scale)
    )
    memory = MemoryBuffer()
    reports: List[TrainReport] = []
    mean_graphs: Dict[Tuple[int, int], np.ndarray] = {}

    for i, regime in enumerate(regimes):
        logger.info("=" * 60)
        logger.info(f"REGIME {i + 1}/{len(regimes)}: {regime.regime_id}")
        logger.info("=" * 60)
        try:
            report = train_regime(model, regime, memory, trainer_cfg)
            evaluations = []
            for j in range(i + 1):
                evaluation = evaluate_regime(model, regimes[j], trainer_cfg)
                performance.record(i, j, evaluation.metrics)
                mean_graphs[(i, j)] = evaluation.mean_graph
                evaluations.append(evaluation)
                logger.info(
                    f"P[{regime.regime_id}][{regimes[j].regime_id}]: "
                    + ", ".join(f"{k}={v:.4f}" for k, v in evaluation.metrics.items())
                )
            update_memory(model, regime, memory, replay_cfg, trainer_cfg)
        except RegimeTrainingError:
            raise
        except Exception as e:
            raise RegimeTrainingError(regime.regime_id, e) from e
        reports.append(report)
        if on_regime_end is not None:
            on_regime_end(
                RegimeOutcome(i, regime, model, memory, performance, report, evaluations, regime_ids)
            )

    return SequenceResult(
        performance=performance,
        reports=reports,
        memory=memory,
        mean_graphs=mean_graphs,
        model=model,
    )
