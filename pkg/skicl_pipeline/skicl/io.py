"""
I/O functions for SKI-CL.
Regime directories, checkpoints, replay manifests and run outputs.
"""

import json
import logging
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
import yaml

from .config import (
    CHECKPOINT_DIR,
    DATA_FILE,
    FORMAT_VERSION,
    GROUND_TRUTH_FILE,
    MARKER_FILE,
    MASK_FILE,
    MEMORY_MANIFEST_FILE,
    META_FILE,
    REPORT_FILE,
    RUNLOG_FILE,
    STRUCTURE_FILE,
    SUMMARY_FILE,
    TABLES_DIR,
    WORKBOOK_FILE,
    ConfigError,
    DataValidationError,
    ModelConfig,
    build_section,
    config_to_dict,
)
from .consistency import StructuralKnowledge
from .forecaster import SkiclModel
from .replay import MemoryBuffer
from .transforms import RegimeData

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.17g"


# =============================================================================
# REGIME DIRECTORIES
# =============================================================================


def _read_matrix(path: Path, n_vars: int) -> np.ndarray:
    """Headerless N x N numeric CSV with file/line-aware errors."""
    try:
        df = pd.read_csv(path, header=None, dtype=str)
    except pd.errors.ParserError as e:
        raise DataValidationError(f"{path}: {e}")
    except pd.errors.EmptyDataError:
        raise DataValidationError(f"{path}: file is empty")
    if df.shape != (n_vars, n_vars):
        raise DataValidationError(f"{path}: expected {n_vars}x{n_vars} matrix, found {df.shape[0]}x{df.shape[1]}")
    numeric = df.apply(pd.to_numeric, errors="coerce")
    bad = numeric.isna().any(axis=1)
    if bad.any():
        line = int(np.argmax(bad.values)) + 1
        raise DataValidationError(f"{path}, line {line}: non-numeric or missing cell")
    return numeric.to_numpy(dtype=np.float64)


def load_regime_csv(directory: str) -> RegimeData:
    """
    Load one regime directory.

    Layout: data.csv (header = variable names, one row per step),
    structure.csv (N x N), optional mask.csv (N x N, 0/1), meta.json
    (edge_kind, regime_name), optional ground_truth_W.csv.

    Args:
        directory: Regime directory

    Returns:
        Validated RegimeData
    """
    root = Path(directory)
    if not root.is_dir():
        raise DataValidationError(f"Regime directory not found: {root}")

    meta_path = root / META_FILE
    if not meta_path.exists():
        raise DataValidationError(f"{meta_path}: missing")
    try:
        with open(meta_path, "r", encoding="utf-8") as f:
            meta = json.load(f)
    except json.JSONDecodeError as e:
        raise DataValidationError(f"{meta_path}, line {e.lineno}: {e.msg}")
    regime_id = str(meta.get("regime_name") or root.name)

    data_path = root / DATA_FILE
    try:
        raw = pd.read_csv(data_path, dtype=str)
    except FileNotFoundError:
        raise DataValidationError(f"{data_path}: missing")
    except pd.errors.ParserError as e:
        raise DataValidationError(f"{data_path}: {e}")
    numeric = raw.apply(pd.to_numeric, errors="coerce")
    bad = numeric.isna().any(axis=1)
    if bad.any():
        # header is line 1
        line = int(np.argmax(bad.values)) + 2
        raise DataValidationError(f"{data_path}, line {line}: non-numeric or missing cell")
    values = numeric.to_numpy(dtype=np.float64).T
    n_vars = values.shape[0]

    adjacency = _read_matrix(root / STRUCTURE_FILE, n_vars)
    mask_path = root / MASK_FILE
    mask = _read_matrix(mask_path, n_vars) if mask_path.exists() else None
    truth_path = root / GROUND_TRUTH_FILE
    truth = _read_matrix(truth_path, n_vars) if truth_path.exists() else None

    try:
        prior = StructuralKnowledge(
            adjacency=adjacency,
            edge_kind=meta.get("edge_kind", "binary"),
            mask=mask,
            regime_id=regime_id,
        )
    except (DataValidationError, ConfigError) as e:
        raise DataValidationError(f"{root / STRUCTURE_FILE}: {e}")

    regime = RegimeData(
        regime_id=regime_id,
        values=values,
        prior=prior,
        variable_names=[str(c) for c in raw.columns],
        ground_truth=truth,
    )
    logger.info(f"Loaded regime '{regime_id}' from {root}: {n_vars} variables x {regime.length} steps")
    return regime


def write_matrix_csv(path: Path, matrix: np.ndarray) -> None:
    pd.DataFrame(np.asarray(matrix)).to_csv(path, header=False, index=False, float_format=FLOAT_FORMAT)


def save_regime_dir(regime: RegimeData, directory: str) -> Path:
    """Write a regime in the layout read by load_regime_csv."""
    root = Path(directory)
    try:
        root.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise ConfigError(f"Cannot create output directory {root}: {e}")
    pd.DataFrame(regime.values.T, columns=regime.variable_names).to_csv(
        root / DATA_FILE, index=False, float_format=FLOAT_FORMAT
    )
    write_matrix_csv(root / STRUCTURE_FILE, regime.prior.adjacency)
    if not np.all(regime.prior.mask == 1):
        write_matrix_csv(root / MASK_FILE, regime.prior.mask)
    if regime.ground_truth is not None:
        write_matrix_csv(root / GROUND_TRUTH_FILE, regime.ground_truth)
    meta = {
        "format_version": FORMAT_VERSION,
        "regime_name": regime.regime_id,
        "edge_kind": regime.prior.edge_kind.value,
        "n_vars": regime.n_vars,
        "length": regime.length,
    }
    with open(root / META_FILE, "w", encoding="utf-8") as f:
        json.dump(meta, f, indent=2, sort_keys=True)
    logger.debug(f"Wrote regime '{regime.regime_id}' to {root}")
    return root


# =============================================================================
# CHECKPOINTS
# =============================================================================


def _pack(arrays: Dict[str, np.ndarray]) -> List[Dict[str, Any]]:
    """[{name, shape, values}] in parameter order, values row-major."""
    return [
        {"name": name, "shape": list(value.shape), "values": value.reshape(-1).tolist()}
        for name, value in arrays.items()
    ]


def _unpack(packed: List[Dict[str, Any]], path: Path) -> Dict[str, np.ndarray]:
    if not isinstance(packed, list):
        raise ConfigError(f"{path}: expected a list of {{name, shape, values}} entries")
    arrays = {}
    for entry in packed:
        try:
            arrays[entry["name"]] = np.asarray(entry["values"], dtype=np.float64).reshape(entry["shape"])
        except (AttributeError, KeyError, TypeError, ValueError) as e:
            raise ConfigError(f"{path}: malformed checkpoint entry: {e}")
    return arrays


def save_checkpoint(path: Path, model: SkiclModel, regime_index: int, regime_ids: List[str]) -> Path:
    """JSON checkpoint; floats are written with repr so they load back exactly."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    state = model.state_dict()
    payload = {
        "format_version": FORMAT_VERSION,
        "regime_index": regime_index,
        "regime_ids": list(regime_ids),
        "model_config": config_to_dict(model.config),
        "params": _pack(state["params"]),
        "buffers": _pack(state["buffers"]),
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f)
    logger.info(f"Wrote checkpoint {path}")
    return path


def load_checkpoint(path: str) -> Tuple[SkiclModel, Dict[str, Any]]:
    """
    Rebuild a model from a checkpoint.

    Returns:
        (model in eval mode, metadata with format_version, regime_index, regime_ids)
    """
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"Checkpoint not found: {path}")
    with open(path, "r", encoding="utf-8") as f:
        payload = json.load(f)
    if payload.get("format_version") != FORMAT_VERSION:
        raise ConfigError(f"{path}: unsupported checkpoint format {payload.get('format_version')!r}")
    model_cfg = build_section(ModelConfig, payload["model_config"], "model_config")
    model = SkiclModel(model_cfg)
    model.load_state_dict({
        "params": _unpack(payload["params"], path),
        "buffers": _unpack(payload.get("buffers", []), path),
    })
    model.eval()
    meta = {k: payload[k] for k in ("format_version", "regime_index", "regime_ids")}
    return model, meta


def checkpoint_path(run_dir: Path, regime_index: int) -> Path:
    return Path(run_dir) / CHECKPOINT_DIR / f"regime_{regime_index + 1}.json"


# =============================================================================
# RUN OUTPUTS
# =============================================================================


def write_json(path: Path, payload: Any) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2, sort_keys=True, default=str)
    return path


def write_memory_manifest(run_dir: Path, memory: MemoryBuffer) -> Path:
    """Replay manifest plus each stored regime's structure CSV."""
    memory_dir = Path(run_dir) / "memory"
    memory_dir.mkdir(parents=True, exist_ok=True)
    for entry in memory.entries:
        write_matrix_csv(memory_dir / f"structure_{entry.regime_id}.csv", entry.prior.adjacency)
    path = write_json(Path(run_dir) / MEMORY_MANIFEST_FILE, memory.to_manifest(FORMAT_VERSION))
    logger.info(f"Wrote replay manifest to {path}")
    return path


def save_config_snapshot(path: Path, params: Dict[str, Any]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        yaml.safe_dump(params, f, sort_keys=False)
    return path


def write_failure_marker(run_dir: Path, regime_id: Optional[str], error: BaseException) -> Path:
    path = Path(run_dir) / MARKER_FILE
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"failed_regime: {regime_id}\nerror: {error}\n")
    logger.error(f"Run failed in regime '{regime_id}'; marker written to {path}")
    return path


def forecasts_frame(window_ids: np.ndarray, predictions: np.ndarray, targets: np.ndarray, names: List[str]) -> pd.DataFrame:
    """Long table: window_id, variable, step, prediction, target."""
    n_windows, n_vars, horizon = predictions.shape
    return pd.DataFrame({
        "window_id": np.repeat(window_ids, n_vars * horizon),
        "variable": np.tile(np.repeat(names, horizon), n_windows),
        "step": np.tile(np.arange(1, horizon + 1), n_windows * n_vars),
        "prediction": predictions.reshape(-1),
        "target": targets.reshape(-1),
    })


def create_runlog(
    command: str,
    output_dir: str,
    params: Dict[str, Any],
    warnings: List[str],
    outputs: Dict[str, Any],
    start_time: datetime,
    end_time: datetime,
) -> Dict[str, Any]:
    """
    Create a run log dictionary with execution metadata.

    Args:
        command: CLI subcommand
        output_dir: Output directory path
        params: Effective parameters
        warnings: Warning messages collected during the run
        outputs: Generated artifacts
        start_time: Start time
        end_time: End time

    Returns:
        Run log dictionary
    """
    return {
        "pipeline": "skicl",
        "format_version": FORMAT_VERSION,
        "command": command,
        "output_dir": str(output_dir),
        "params": params,
        "start_time": start_time.isoformat(),
        "end_time": end_time.isoformat(),
        "duration_seconds": (end_time - start_time).total_seconds(),
        "warnings": warnings,
        "outputs": outputs,
    }


def write_outputs(
    outdir: str,
    tables_dict: Dict[str, pd.DataFrame],
    report_html: str,
    runlog: Dict[str, Any],
    summary: Optional[Dict[str, Any]] = None,
) -> Dict[str, str]:
    """
    Write tables, workbook, summary, report and runlog; return their paths.

    Args:
        outdir: Run directory
        tables_dict: Name -> table; performance matrices keep their index
        report_html: HTML report content (empty to skip)
        runlog: Run log dictionary
        summary: AP/AF summary written to summary.json

    Returns:
        Dict of output type -> path
    """
    outdir_path = Path(outdir)
    outdir_path.mkdir(parents=True, exist_ok=True)
    output_paths = {}

    # 1. Tables (CSVs)
    tables_dir = outdir_path / TABLES_DIR
    tables_dir.mkdir(exist_ok=True)
    for name, df in tables_dict.items():
        if df.empty:
            continue
        keep_index = name.startswith("performance_matrix_")
        target = outdir_path if keep_index else tables_dir
        df.to_csv(target / f"{name}.csv", index=keep_index, float_format=FLOAT_FORMAT)
        logger.debug(f"Wrote table {name}")
    output_paths["tables_dir"] = str(tables_dir)

    # 2. Multi-sheet Excel
    xlsx_path = outdir_path / WORKBOOK_FILE
    with pd.ExcelWriter(xlsx_path, engine="openpyxl") as writer:
        for name, df in tables_dict.items():
            if not df.empty:
                # Excel limits sheet names to 31 characters
                df.to_excel(writer, sheet_name=name[:31], index=name.startswith("performance_matrix_"))
    output_paths["xlsx"] = str(xlsx_path)
    logger.info(f"Wrote Excel output to {xlsx_path}")

    # 3. Summary
    if summary is not None:
        output_paths["summary"] = str(write_json(outdir_path / SUMMARY_FILE, summary))
        logger.info(f"Wrote summary to {output_paths['summary']}")

    # 4. Report
    if report_html:
        report_path = outdir_path / REPORT_FILE
        with open(report_path, "w", encoding="utf-8") as f:
            f.write(report_html)
        output_paths["report"] = str(report_path)
        logger.info(f"Wrote HTML report to {report_path}")

    # 5. Runlog
    runlog_path = outdir_path / RUNLOG_FILE
    with open(runlog_path, "w", encoding="utf-8") as f:
        json.dump(runlog, f, indent=2, default=str)
    output_paths["runlog"] = str(runlog_path)
    logger.info(f"Wrote runlog to {runlog_path}")

    return output_paths
