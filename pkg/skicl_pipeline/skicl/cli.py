"""
CLI module for SKI-CL.
Command-line interface: generate, train, evaluate and replay-select.
"""

import argparse
import logging
import sys
from dataclasses import replace
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, List, Optional

import pandas as pd

from .config import (
    CONFIG_SNAPSHOT_FILE,
    EVALUATION_FILE,
    FORMAT_VERSION,
    GRAPH_DIR,
    RUN_LOG_FILE,
    ConfigError,
    DataValidationError,
    ExperimentConfig,
    config_to_dict,
    load_experiment,
)
from .io import (
    checkpoint_path,
    create_runlog,
    forecasts_frame,
    load_checkpoint,
    load_regime_csv,
    save_checkpoint,
    save_config_snapshot,
    save_regime_dir,
    write_failure_marker,
    write_json,
    write_matrix_csv,
    write_memory_manifest,
    write_outputs,
)
from .replay import select_memory
from .report import generate_report
from .synthetic import generate_synthetic
from .tensor import ShapeError
from .trainer import RegimeOutcome, RegimeTrainingError, evaluate_regime, run_sequence
from .transforms import PreparedRegime, RegimeData, prepare_regime

# Configure logging
logging.basicConfig(
    level=logging.INFO,
    format="%(asctime)s - %(levelname)s - %(message)s",
    datefmt="%Y-%m-%d %H:%M:%S",
)
logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s - %(levelname)s - %(message)s"


class WarningCollector(logging.Handler):
    """Keeps WARNING-and-above messages for the runlog and report."""

    def __init__(self):
        super().__init__(level=logging.WARNING)
        self.messages: List[str] = []

    def emit(self, record: logging.LogRecord) -> None:
        self.messages.append(record.getMessage())


def attach_run_logging(run_dir: Path) -> tuple:
    """Mirror the root logger into run.log and collect warnings."""
    run_dir.mkdir(parents=True, exist_ok=True)
    file_handler = logging.FileHandler(run_dir / RUN_LOG_FILE, mode="w", encoding="utf-8")
    file_handler.setFormatter(logging.Formatter(LOG_FORMAT, datefmt="%Y-%m-%d %H:%M:%S"))
    collector = WarningCollector()
    root = logging.getLogger()
    root.addHandler(file_handler)
    root.addHandler(collector)
    return file_handler, collector


def detach_run_logging(handlers: tuple) -> None:
    root = logging.getLogger()
    for handler in handlers:
        root.removeHandler(handler)
        handler.close()


def build_overrides(args: argparse.Namespace) -> Dict[str, Any]:
    """CLI flags -> nested parameter overrides."""
    overrides: Dict[str, Any] = {}

    def put(section: str, key: str, value: Any) -> None:
        if value is not None:
            overrides.setdefault(section, {})[key] = value

    put("trainer", "seed", getattr(args, "seed", None))
    put("trainer", "lambda", getattr(args, "lam", None))
    put("trainer", "alpha", getattr(args, "alpha", None))
    put("replay", "selector", getattr(args, "selector", None))
    put("replay", "budget_ratio", getattr(args, "budget", None))
    if getattr(args, "out", None):
        overrides["output_dir"] = args.out
    return overrides


def load_regimes(cfg: ExperimentConfig, directories: Optional[List[str]] = None) -> List[RegimeData]:
    """Regimes from explicit directories, else from the configured data source."""
    if directories:
        return [load_regime_csv(d) for d in directories]
    if cfg.data.source == "synthetic":
        return generate_synthetic(cfg.data.synthetic, cfg.trainer.split_ratios)
    return [load_regime_csv(d) for d in cfg.data.regime_dirs]


def prepare_all(regimes: List[RegimeData], cfg: ExperimentConfig, input_len: int, horizon: int) -> List[PreparedRegime]:
    return [
        prepare_regime(r, i, input_len, horizon, cfg.trainer.split_ratios, cfg.trainer.stride)
        for i, r in enumerate(regimes)
    ]


def dump_window_graphs(directory: Path, regime_id: str, window_ids, graphs) -> None:
    target = directory / regime_id
    target.mkdir(parents=True, exist_ok=True)
    for window_id, graph in zip(window_ids, graphs):
        write_matrix_csv(target / f"window_{int(window_id)}.csv", graph)


# =============================================================================
# SUBCOMMANDS
# =============================================================================


def cmd_generate(args: argparse.Namespace) -> int:
    cfg, _ = load_experiment(args.config, build_overrides(args), check_paths=False)
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, data=replace(cfg.data, synthetic=replace(cfg.data.synthetic, seed=args.seed)))
    out = Path(args.out or cfg.output_dir)
    regimes = generate_synthetic(cfg.data.synthetic, cfg.trainer.split_ratios)
    for regime in regimes:
        save_regime_dir(regime, str(out / regime.regime_id))
    logger.info(f"Wrote {len(regimes)} regime directories to {out}")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    start_time = datetime.now()
    cfg, params = load_experiment(args.config, build_overrides(args))
    run_dir = Path(cfg.output_dir)
    handlers = attach_run_logging(run_dir)
    collector = handlers[1]
    current = {"regime_id": None}
    try:
        logger.info("=" * 60)
        logger.info("SKI-CL: continual forecasting run")
        logger.info("=" * 60)
        save_config_snapshot(run_dir / CONFIG_SNAPSHOT_FILE, config_to_dict(cfg))

        regimes = load_regimes(cfg)
        model_cfg = cfg.model
        if model_cfg.n_vars is None:
            model_cfg = replace(model_cfg, n_vars=regimes[0].n_vars)
        prepared = prepare_all(regimes, cfg, model_cfg.input_len, model_cfg.horizon)
        regime_ids = [r.regime_id for r in prepared]
        names = regimes[0].variable_names

        def on_regime_end(outcome: RegimeOutcome) -> None:
            i = outcome.index
            current["regime_id"] = regime_ids[i + 1] if i + 1 < len(regime_ids) else None
            save_checkpoint(checkpoint_path(run_dir, i), outcome.model, i, regime_ids)
            graph_dir = run_dir / GRAPH_DIR / f"after_regime_{i + 1}"
            graph_dir.mkdir(parents=True, exist_ok=True)
            for evaluation in outcome.evaluations:
                write_matrix_csv(graph_dir / f"{evaluation.regime_id}_mean.csv", evaluation.mean_graph)
            if cfg.replay.selector != "none":
                write_memory_manifest(run_dir, outcome.memory)

        current["regime_id"] = regime_ids[0]
        try:
            result = run_sequence(prepared, model_cfg, cfg.trainer, cfg.replay, on_regime_end)
        except RegimeTrainingError as e:
            write_failure_marker(run_dir, e.regime_id, e.cause)
            return 1

        performance = result.performance
        summary = performance.summary()
        tables: Dict[str, pd.DataFrame] = {
            f"performance_matrix_{m}": performance.to_frame(m) for m in performance.metrics
        }
        tables["training_history"] = result.history_frame()
        final_evaluations = []
        for regime in prepared:
            evaluation = evaluate_regime(result.model, regime, cfg.trainer, keep_outputs=True)
            final_evaluations.append(evaluation)
            if args.dump_graphs:
                dump_window_graphs(run_dir / GRAPH_DIR / "windows", regime.regime_id, evaluation.window_ids, evaluation.graphs)
            if args.dump_forecasts:
                tables[f"forecasts_{regime.regime_id}"] = forecasts_frame(
                    evaluation.window_ids, evaluation.predictions, evaluation.targets, names
                )
        tables["window_structure"] = pd.concat([e.window_structure for e in final_evaluations], ignore_index=True)
        tables["memory"] = pd.DataFrame([
            {"regime_id": e.regime_id, "selector": e.selector, "budget": e.budget, "selected": len(e)}
            for e in result.memory.entries
        ])

        settings = {"selector": cfg.replay.selector, "lambda": cfg.trainer.lam, "alpha": cfg.trainer.alpha}
        report_html = ""
        if not args.no_report:
            report_html = generate_report(
                summary,
                {m: performance.to_frame(m) for m in performance.metrics},
                tables["training_history"],
                collector.messages,
                str(run_dir),
                settings,
            )
        end_time = datetime.now()
        runlog = create_runlog(
            command="train",
            output_dir=str(run_dir),
            params=params,
            warnings=collector.messages,
            outputs={"tables": sorted(tables), "checkpoints": len(prepared)},
            start_time=start_time,
            end_time=end_time,
        )
        write_outputs(str(run_dir), tables, report_html, runlog, summary)

        logger.info("=" * 60)
        logger.info("Run completed successfully!")
        logger.info(f"Duration: {(end_time - start_time).total_seconds():.2f} seconds")
        last = summary.get(regime_ids[-1], {}).get("mae", {})
        logger.info(f"Final AP(MAE)={last.get('AP')}, AF(MAE)={last.get('AF')}")
        if collector.messages:
            logger.warning(f"Warnings: {len(collector.messages)}")
        logger.info("=" * 60)
        return 0
    except (ConfigError, DataValidationError, ShapeError) as e:
        logger.error(f"Run aborted: {e}")
        if current["regime_id"] is not None:
            write_failure_marker(run_dir, current["regime_id"], e)
        return 1
    finally:
        detach_run_logging(handlers)


def _check_compatible(model, regimes: List[RegimeData]) -> None:
    for regime in regimes:
        if regime.n_vars != model.config.n_vars:
            raise ConfigError(
                f"Regime '{regime.regime_id}' has {regime.n_vars} variables, checkpoint expects {model.config.n_vars}"
            )
        if regime.prior.edge_kind is not model.config.kind:
            raise ConfigError(
                f"Regime '{regime.regime_id}' prior is {regime.prior.edge_kind.value}, "
                f"checkpoint learns {model.config.kind.value} graphs"
            )


def cmd_evaluate(args: argparse.Namespace) -> int:
    """Test metrics from a checkpoint; never reads the replay manifest."""
    cfg, _ = load_experiment(args.config, build_overrides(args), check_paths=not args.regimes)
    model, meta = load_checkpoint(args.checkpoint)
    regimes = load_regimes(cfg, args.regimes)
    _check_compatible(model, regimes)
    prepared = prepare_all(regimes, cfg, model.config.input_len, model.config.horizon)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)

    results: Dict[str, Dict[str, float]] = {}
    structures = []
    for regime in prepared:
        evaluation = evaluate_regime(model, regime, cfg.trainer, keep_outputs=True)
        results[regime.regime_id] = evaluation.metrics
        structures.append(evaluation.window_structure)
        if args.dump_graphs:
            (out / GRAPH_DIR).mkdir(parents=True, exist_ok=True)
            write_matrix_csv(out / GRAPH_DIR / f"{regime.regime_id}_mean.csv", evaluation.mean_graph)
            dump_window_graphs(out / GRAPH_DIR / "windows", regime.regime_id, evaluation.window_ids, evaluation.graphs)
        if args.dump_forecasts:
            forecasts_frame(
                evaluation.window_ids, evaluation.predictions, evaluation.targets, regimes[regime.index].variable_names
            ).to_csv(out / f"forecasts_{regime.regime_id}.csv", index=False)
        logger.info(f"{regime.regime_id}: " + ", ".join(f"{k}={v:.4f}" for k, v in evaluation.metrics.items()))

    pd.concat(structures, ignore_index=True).to_csv(out / "window_structure.csv", index=False)
    write_json(out / EVALUATION_FILE, {
        "format_version": FORMAT_VERSION,
        "checkpoint_regime_index": meta["regime_index"],
        "metrics": results,
    })
    logger.info(f"Wrote evaluation to {out / EVALUATION_FILE}")
    return 0


def cmd_replay_select(args: argparse.Namespace) -> int:
    """Run memory selection standalone on one regime for inspection."""
    cfg, _ = load_experiment(args.config, build_overrides(args), check_paths=False)
    model, _ = load_checkpoint(args.checkpoint)
    regime = load_regime_csv(args.regime)
    _check_compatible(model, [regime])
    prepared = prepare_regime(
        regime, args.regime_index, model.config.input_len, model.config.horizon,
        cfg.trainer.split_ratios, cfg.trainer.stride,
    )
    selection = select_memory(
        model, prepared.train, prepared.index, cfg.replay, seed=cfg.trainer.seed,
        batch_size=cfg.trainer.eval_batch_size,
    )
    payload = {
        "format_version": FORMAT_VERSION,
        "regime_id": regime.regime_id,
        "selector": cfg.replay.selector,
        "budget": selection.budget,
        "n_windows": len(prepared.train),
        "selected_window_ids": [int(prepared.train.starts[r]) for r in selection.rows],
        "modes": list(selection.modes),
    }
    if selection.split is not None:
        payload["candidates"] = [
            {"k": c.k, "boundaries": c.boundaries, "objective": c.objective, "feasible": c.feasible}
            for c in selection.split.candidates
        ]
    out = Path(cfg.output_dir)
    path = write_json(out / f"replay_selection_{regime.regime_id}.json", payload)
    logger.info(f"Selected {len(selection.rows)}/{len(prepared.train)} windows; wrote {path}")
    return 0


# =============================================================================
# ENTRY POINT
# =============================================================================


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None, help="YAML or JSON parameter file (default: packaged params.yaml)")
    common.add_argument("--out", default=None, help="Output directory (overrides output_dir)")
    common.add_argument("--seed", type=int, default=None, help="Random seed")
    common.add_argument("--verbose", "-v", action="store_true", help="Enable verbose/debug logging")

    replay_flags = argparse.ArgumentParser(add_help=False)
    replay_flags.add_argument("--selector", choices=["ski-cl", "er", "none"], default=None, help="Memory selector")
    replay_flags.add_argument("--budget", type=float, default=None, help="Memory budget ratio in (0, 1]")

    dumps = argparse.ArgumentParser(add_help=False)
    dumps.add_argument("--dump-graphs", action="store_true", help="Write per-window learned graphs")
    dumps.add_argument("--dump-forecasts", action="store_true", help="Write per-window forecasts")

    parser = argparse.ArgumentParser(description="SKI-CL: continual multivariate forecasting with structural knowledge")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("generate", parents=[common], help="Write synthetic regime directories")

    train = sub.add_parser("train", parents=[common, replay_flags, dumps], help="Train over the regime sequence")
    train.add_argument("--lambda", dest="lam", type=float, default=None, help="Consistency weight")
    train.add_argument("--alpha", type=float, default=None, help="Memory loss weight")
    train.add_argument("--no-report", action="store_true", help="Skip the HTML report")

    evaluate = sub.add_parser("evaluate", parents=[common, dumps], help="Evaluate a checkpoint")
    evaluate.add_argument("--checkpoint", required=True, help="Checkpoint JSON")
    evaluate.add_argument("--regimes", nargs="*", default=None, help="Regime directories (default: config data source)")

    select = sub.add_parser("replay-select", parents=[common, replay_flags], help="Run memory selection on one regime")
    select.add_argument("--checkpoint", required=True, help="Checkpoint JSON")
    select.add_argument("--regime", required=True, help="Regime directory")
    select.add_argument("--regime-index", type=int, default=0, help="0-based position of the regime")

    return parser


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "replay-select": cmd_replay_select,
}


def main(args: list = None) -> int:
    """Main CLI entry point."""
    parsed_args = build_parser().parse_args(args)
    if parsed_args.verbose:
        logging.getLogger().setLevel(logging.DEBUG)
    try:
        return COMMANDS[parsed_args.command](parsed_args)
    except (ConfigError, DataValidationError, ShapeError) as e:
        logger.error(f"{parsed_args.command} failed: {e}")
        return 1
    except OSError as e:
        logger.error(f"{parsed_args.command} failed writing outputs: {e}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
