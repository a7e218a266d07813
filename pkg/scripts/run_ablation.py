"""
Multi-seed sweep over replay selectors, lambda values and memory budgets.

Each setting runs the same training sequence as `skicl train` and the final
AP / AF of every metric is collected into plot-ready CSV files.

Usage:
    python scripts/run_ablation.py --config my_params.yaml --out output/ablation \
        --selectors none er ski-cl --lambdas 0 1 --budgets 0.01 0.1 --seeds 0 1 2
"""

from __future__ import annotations

import argparse
import itertools
import logging
import sys
from dataclasses import replace
from datetime import datetime
from pathlib import Path

import pandas as pd

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "skicl_pipeline"))

from skicl.cli import load_regimes, prepare_all  # noqa: E402
from skicl.config import SELECTORS, ConfigError, DataValidationError, load_experiment  # noqa: E402
from skicl.trainer import RegimeTrainingError, run_sequence  # noqa: E402

logging.basicConfig(
    level=logging.INFO,
    format="%(asctime)s - %(levelname)s - %(message)s",
    datefmt="%Y-%m-%d %H:%M:%S",
)
logger = logging.getLogger(__name__)

RUNS_FILE = "ablation_runs.csv"
SUMMARY_FILE = "ablation_summary.csv"
SETTING_COLUMNS = ["selector", "lambda", "budget"]


def run_setting(config_path, selector: str, lam: float, budget: float, seed: int) -> list:
    """One training sequence; returns one row per (final regime, metric)."""
    overrides = {
        "trainer": {"seed": seed, "lambda": lam},
        "replay": {"selector": selector, "budget_ratio": budget},
        "data": {"synthetic": {"seed": seed}},
    }
    cfg, _ = load_experiment(config_path, overrides)
    regimes = load_regimes(cfg)
    model_cfg = cfg.model
    if model_cfg.n_vars is None:
        model_cfg = replace(model_cfg, n_vars=regimes[0].n_vars)
    prepared = prepare_all(regimes, cfg, model_cfg.input_len, model_cfg.horizon)
    result = run_sequence(prepared, model_cfg, cfg.trainer, cfg.replay)

    summary = result.performance.summary()
    final_id = prepared[-1].regime_id
    rows = []
    for metric, values in summary.get(final_id, {}).items():
        rows.append({
            "selector": selector,
            "lambda": lam,
            "budget": budget,
            "seed": seed,
            "metric": metric,
            "AP": values["AP"],
            "AF": values["AF"],
        })
    return rows


def summarize(runs: pd.DataFrame) -> pd.DataFrame:
    """Median and spread over seeds for every setting and metric."""
    grouped = runs.groupby(SETTING_COLUMNS + ["metric"], dropna=False)
    summary = grouped.agg(
        AP_median=("AP", "median"),
        AP_min=("AP", "min"),
        AP_max=("AP", "max"),
        AF_median=("AF", "median"),
        AF_min=("AF", "min"),
        AF_max=("AF", "max"),
        n_seeds=("seed", "nunique"),
    )
    return summary.reset_index()


def main(args: list = None) -> int:
    parser = argparse.ArgumentParser(description="SKI-CL ablation sweep")
    parser.add_argument("--config", help="Path to params.yaml (defaults to the packaged one)")
    parser.add_argument("--out", default="output/ablation", help="Directory for the CSV files")
    parser.add_argument("--selectors", nargs="+", default=list(SELECTORS), choices=SELECTORS)
    parser.add_argument("--lambdas", nargs="+", type=float, default=[1.0])
    parser.add_argument("--budgets", nargs="+", type=float, default=[0.1])
    parser.add_argument("--seeds", nargs="+", type=int, default=[0, 1, 2])
    parsed = parser.parse_args(args)

    start_time = datetime.now()
    out = Path(parsed.out)
    out.mkdir(parents=True, exist_ok=True)

    grid = list(itertools.product(parsed.selectors, parsed.lambdas, parsed.budgets, parsed.seeds))
    logger.info("=" * 60)
    logger.info(f"SKI-CL ablation: {len(grid)} runs")
    logger.info("=" * 60)

    rows = []
    for n, (selector, lam, budget, seed) in enumerate(grid, start=1):
        logger.info(f"[{n}/{len(grid)}] selector={selector}, lambda={lam}, budget={budget}, seed={seed}")
        try:
            rows.extend(run_setting(parsed.config, selector, lam, budget, seed))
        except RegimeTrainingError as e:
            logger.error(f"Run failed in regime '{e.regime_id}': {e.cause}")
        except (ConfigError, DataValidationError) as e:
            logger.error(f"Invalid setting: {e}")
            return 1

    if not rows:
        logger.error("No run completed")
        return 1

    runs = pd.DataFrame(rows)
    runs.to_csv(out / RUNS_FILE, index=False)
    summarize(runs).to_csv(out / SUMMARY_FILE, index=False)
    logger.info(f"Wrote {out / RUNS_FILE} and {out / SUMMARY_FILE}")
    logger.info(f"Duration: {(datetime.now() - start_time).total_seconds():.2f} seconds")
    return 0


if __name__ == "__main__":
    sys.exit(main())
