"""
Configuration and constants for the SKI-CL pipeline.
Continual multivariate time-series forecasting with structural knowledge.
"""

import copy
import dataclasses
import logging
import os
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

import yaml

logger = logging.getLogger(__name__)


# =============================================================================
# ERRORS
# =============================================================================


class ConfigError(ValueError):
    """Invalid hyperparameters, config documents or model geometry."""


class DataValidationError(ValueError):
    """Malformed regime data or violated structural-knowledge invariants."""


# =============================================================================
# FORMATS AND FILE NAMES
# =============================================================================

FORMAT_VERSION = "skicl/1"

DEFAULT_CONFIG_PATH = Path(__file__).resolve().parent.parent / "config" / "params.yaml"

# Regime directory layout
DATA_FILE = "data.csv"
STRUCTURE_FILE = "structure.csv"
MASK_FILE = "mask.csv"
META_FILE = "meta.json"
GROUND_TRUTH_FILE = "ground_truth_W.csv"

# Run directory layout
CHECKPOINT_DIR = "checkpoints"
GRAPH_DIR = "graphs"
TABLES_DIR = "tables"
SUMMARY_FILE = "summary.json"
RUNLOG_FILE = "runlog.json"
RUN_LOG_FILE = "run.log"
CONFIG_SNAPSHOT_FILE = "config_snapshot.yaml"
MEMORY_MANIFEST_FILE = "replay_manifest.json"
MARKER_FILE = "FAILED"
REPORT_FILE = "report.html"
WORKBOOK_FILE = "results.xlsx"
EVALUATION_FILE = "evaluation.json"

# =============================================================================
# DOMAIN CONSTANTS
# =============================================================================


class EdgeKind(str, Enum):
    """Edge semantics shared by learned graphs and structural priors."""

    BINARY = "binary"
    CONTINUOUS = "continuous"


SELECTORS = ("ski-cl", "er", "none")

FORECAST_METRICS = ["mae", "rmse"]
RAW_FORECAST_METRICS = ["mae_raw", "rmse_raw"]
BINARY_STRUCTURE_METRICS = ["precision", "recall"]
GROUND_TRUTH_METRICS = ["gt_precision", "gt_recall"]
CONTINUOUS_STRUCTURE_METRICS = ["graph_mae", "graph_rmse"]

# Config keys that are Python keywords
KEY_ALIASES = {"lambda": "lam"}


def parse_edge_kind(value: Any) -> EdgeKind:
    """Coerce a string or EdgeKind into EdgeKind, raising ConfigError."""
    if isinstance(value, EdgeKind):
        return value
    try:
        return EdgeKind(str(value).strip().lower())
    except ValueError:
        raise ConfigError(
            f"Unknown edge kind '{value}', expected one of {[k.value for k in EdgeKind]}"
        )


# =============================================================================
# CONFIG SECTIONS
# =============================================================================


@dataclass(frozen=True)
class SyntheticConfig:
    """Non-repeating random walk benchmark (desk-scale defaults)."""

    n_vars: int = 10
    total_steps: int = 4000
    n_regimes: int = 4
    noise_std: float = 0.01
    sparsity: float = 0.1
    seed: int = 0
    prior_threshold: float = 0.5
    spectral_radius: float = 0.9
    clip_value: float = 10.0

    @property
    def regime_length(self) -> int:
        return self.total_steps // self.n_regimes

    def validate(self) -> None:
        if self.noise_std <= 0:
            raise ConfigError(f"synthetic.noise_std must be > 0, got {self.noise_std}")
        if not 0 < self.sparsity < 1:
            raise ConfigError(f"synthetic.sparsity must lie in (0, 1), got {self.sparsity}")
        if self.n_vars < 2:
            raise ConfigError(f"synthetic.n_vars must be >= 2, got {self.n_vars}")
        if self.n_regimes < 1:
            raise ConfigError(f"synthetic.n_regimes must be >= 1, got {self.n_regimes}")
        if self.regime_length < 2:
            raise ConfigError(
                f"synthetic.total_steps={self.total_steps} too short for {self.n_regimes} regimes"
            )
        if not 0 < self.prior_threshold < 1:
            raise ConfigError(
                f"synthetic.prior_threshold must lie in (0, 1), got {self.prior_threshold}"
            )


@dataclass(frozen=True)
class EncoderConfig:
    """Temporal encoder (node embedding) geometry."""

    channels: Tuple[int, ...] = (8, 16, 32)
    kernel_sizes: Tuple[int, ...] = (2, 3, 3)
    dilation: int = 2
    batch_norm: bool = True
    embedding_dim: int = 128

    @property
    def receptive_field(self) -> int:
        return 1 + sum((k - 1) * self.dilation for k in self.kernel_sizes)

    def validate(self) -> None:
        if len(self.channels) != len(self.kernel_sizes) or not self.channels:
            raise ConfigError("encoder.channels and encoder.kernel_sizes must be non-empty and aligned")
        if self.dilation < 1:
            raise ConfigError(f"encoder.dilation must be >= 1, got {self.dilation}")
        if any(k < 1 for k in self.kernel_sizes) or any(c < 1 for c in self.channels):
            raise ConfigError("encoder kernel sizes and channels must be positive")
        if self.embedding_dim < 1:
            raise ConfigError(f"encoder.embedding_dim must be >= 1, got {self.embedding_dim}")


@dataclass(frozen=True)
class TgconvConfig:
    """Stack of temporal graph convolution blocks."""

    num_blocks: int = 2
    channels: int = 16
    kernel_size: int = 2
    dilations: Tuple[int, ...] = (1, 2)
    residual_projection: bool = True

    @property
    def receptive_field(self) -> int:
        return 1 + sum((self.kernel_size - 1) * d for d in self.dilations)

    def validate(self) -> None:
        if self.num_blocks < 1:
            raise ConfigError(f"tgconv.num_blocks must be >= 1, got {self.num_blocks}")
        if len(self.dilations) != self.num_blocks:
            raise ConfigError(
                f"tgconv.dilations has {len(self.dilations)} entries for {self.num_blocks} blocks"
            )
        if any(d < 1 for d in self.dilations):
            raise ConfigError(f"tgconv dilations must be >= 1, got {list(self.dilations)}")
        if self.kernel_size < 1 or self.channels < 1:
            raise ConfigError("tgconv.kernel_size and tgconv.channels must be positive")


@dataclass(frozen=True)
class ModelConfig:
    """Graph-inference + forecaster geometry. n_vars is filled from the data when None."""

    n_vars: Optional[int] = None
    input_len: int = 12
    horizon: int = 12
    edge_kind: str = "binary"
    edge_hidden: int = 128
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    tgconv: TgconvConfig = field(default_factory=TgconvConfig)

    @property
    def kind(self) -> EdgeKind:
        return parse_edge_kind(self.edge_kind)

    def validate(self) -> None:
        self.encoder.validate()
        self.tgconv.validate()
        parse_edge_kind(self.edge_kind)
        if self.horizon < 1:
            raise ConfigError(f"model.horizon must be >= 1, got {self.horizon}")
        if self.input_len < self.encoder.receptive_field:
            raise ConfigError(
                f"model.input_len={self.input_len} is below the encoder receptive field "
                f"({self.encoder.receptive_field})"
            )
        if self.input_len < self.tgconv.receptive_field:
            raise ConfigError(
                f"model.input_len={self.input_len} is below the TGConv receptive field "
                f"({self.tgconv.receptive_field})"
            )
        if self.edge_hidden < 1:
            raise ConfigError(f"model.edge_hidden must be >= 1, got {self.edge_hidden}")
        if self.n_vars is not None and self.n_vars < 1:
            raise ConfigError(f"model.n_vars must be >= 1, got {self.n_vars}")


@dataclass(frozen=True)
class TrainerConfig:
    """Sequential per-regime training."""

    epochs: int = 30
    batch_size: int = 8
    eval_batch_size: int = 64
    alpha: float = 1.0
    lam: float = 1.0
    lr: float = 1e-4
    lr_decay: float = 0.8
    lr_step_epochs: int = 20
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    patience: int = 10
    seed: int = 0
    split_ratios: Tuple[float, float, float] = (0.6, 0.2, 0.2)
    stride: int = 1
    threshold: float = 0.5
    report_raw_scale: bool = True

    def validate(self) -> None:
        if self.epochs < 1:
            raise ConfigError(f"trainer.epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1 or self.eval_batch_size < 1:
            raise ConfigError("trainer batch sizes must be >= 1")
        if self.alpha < 0:
            raise ConfigError(f"trainer.alpha must be >= 0, got {self.alpha}")
        if self.lam < 0:
            raise ConfigError(f"trainer.lambda must be >= 0, got {self.lam}")
        if self.lr <= 0:
            raise ConfigError(f"trainer.lr must be > 0, got {self.lr}")
        if self.patience < 1:
            raise ConfigError(f"trainer.patience must be >= 1, got {self.patience}")
        if len(self.split_ratios) != 3 or abs(sum(self.split_ratios) - 1.0) > 1e-9:
            raise ConfigError(f"trainer.split_ratios must be 3 ratios summing to 1, got {self.split_ratios}")
        if self.stride < 1:
            raise ConfigError(f"trainer.stride must be >= 1, got {self.stride}")
        if not 0 < self.threshold < 1:
            raise ConfigError(f"trainer.threshold must lie in (0, 1), got {self.threshold}")


@dataclass(frozen=True)
class ReplayConfig:
    """Memory construction. delta2 = None means 'number of windows in the regime'."""

    selector: str = "ski-cl"
    budget_ratio: float = 0.01
    n_parts: int = 10
    max_modes: int = 7
    delta1: int = 1
    delta2: Optional[int] = None

    def validate(self) -> None:
        if self.selector not in SELECTORS:
            raise ConfigError(f"replay.selector must be one of {SELECTORS}, got '{self.selector}'")
        if not 0 < self.budget_ratio <= 1:
            raise ConfigError(f"replay.budget_ratio must lie in (0, 1], got {self.budget_ratio}")
        if self.n_parts < 3:
            raise ConfigError(f"replay.n_parts must be >= 3, got {self.n_parts}")
        if self.max_modes < 2:
            raise ConfigError(f"replay.max_modes must be >= 2, got {self.max_modes}")
        if self.delta1 < 0:
            raise ConfigError(f"replay.delta1 must be >= 0, got {self.delta1}")
        if self.delta2 is not None and self.delta2 <= self.delta1:
            raise ConfigError("replay.delta2 must exceed replay.delta1")


@dataclass(frozen=True)
class DataConfig:
    """Where regimes come from: the synthetic generator or prepared regime directories."""

    source: str = "synthetic"
    synthetic: SyntheticConfig = field(default_factory=SyntheticConfig)
    regime_dirs: Tuple[str, ...] = ()

    def validate(self, check_paths: bool = True) -> None:
        if self.source not in ("synthetic", "directories"):
            raise ConfigError(f"data.source must be 'synthetic' or 'directories', got '{self.source}'")
        if self.source == "synthetic":
            self.synthetic.validate()
            return
        if not self.regime_dirs:
            raise ConfigError("data.regime_dirs is empty for source 'directories'")
        if check_paths:
            missing = [d for d in self.regime_dirs if not os.path.isdir(d)]
            if missing:
                raise ConfigError(f"Regime directories not found: {missing}")


@dataclass(frozen=True)
class ExperimentConfig:
    """Top-level experiment definition."""

    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    replay: ReplayConfig = field(default_factory=ReplayConfig)
    output_dir: str = "runs/skicl"

    def validate(self, check_paths: bool = True) -> "ExperimentConfig":
        self.data.validate(check_paths=check_paths)
        self.model.validate()
        self.trainer.validate()
        self.replay.validate()
        return self


# =============================================================================
# LOADING
# =============================================================================


def load_params(config_path: Optional[str] = None) -> Dict[str, Any]:
    """
    Load a parameter document (YAML or JSON) into a plain dict.

    Args:
        config_path: Path to the document; None loads the packaged defaults

    Returns:
        Parsed mapping, empty when the default file is absent
    """
    path = Path(config_path) if config_path else DEFAULT_CONFIG_PATH
    if not path.exists():
        if config_path:
            raise ConfigError(f"Config file not found: {path}")
        logger.warning(f"Default config not found: {path}, using built-in defaults")
        return {}
    with open(path, "r", encoding="utf-8") as f:
        try:
            params = yaml.safe_load(f) or {}
        except yaml.YAMLError as e:
            raise ConfigError(f"Cannot parse config {path}: {e}")
    if not isinstance(params, dict):
        raise ConfigError(f"Config {path} must contain a mapping at the top level")
    return params


def _coerce(value: Any, default: Any, where: str) -> Any:
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{where} expects a boolean, got {value!r}")
        return value
    if isinstance(default, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{where} expects a list, got {value!r}")
        return tuple(value)
    if isinstance(default, float) and isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    if isinstance(default, int) and not isinstance(value, int):
        raise ConfigError(f"{where} expects an integer, got {value!r}")
    return value


def build_section(cls, values: Optional[Dict[str, Any]], where: str):
    """
    Build a config dataclass from a mapping, rejecting unknown keys.

    Args:
        cls: Target dataclass type
        values: Mapping of overrides (None = all defaults)
        where: Dotted location used in error messages

    Returns:
        Instance of cls
    """
    if values is not None and not isinstance(values, dict):
        raise ConfigError(f"Section '{where}' must be a mapping")
    values = dict(values or {})
    known = {f.name: f for f in dataclasses.fields(cls)}
    defaults = cls()
    kwargs = {}
    for raw_key, value in values.items():
        key = KEY_ALIASES.get(raw_key, raw_key)
        if key not in known:
            raise ConfigError(f"Unknown config key '{where}.{raw_key}'")
        default = getattr(defaults, key)
        if dataclasses.is_dataclass(default):
            kwargs[key] = build_section(type(default), value, f"{where}.{raw_key}")
        elif value is None or default is None:
            kwargs[key] = value
        else:
            kwargs[key] = _coerce(value, default, f"{where}.{raw_key}")
    return cls(**kwargs)


def experiment_from_params(params: Dict[str, Any], check_paths: bool = True) -> ExperimentConfig:
    """Materialize and validate an ExperimentConfig from a parsed document."""
    cfg = build_section(ExperimentConfig, params, "config")
    return cfg.validate(check_paths=check_paths)


def config_to_dict(cfg: Any) -> Dict[str, Any]:
    """Dataclass config -> plain dict using the document key names."""
    raw = dataclasses.asdict(cfg)

    def rename(node):
        if isinstance(node, dict):
            inverse = {v: k for k, v in KEY_ALIASES.items()}
            return {inverse.get(k, k): rename(v) for k, v in node.items()}
        if isinstance(node, tuple):
            return [rename(v) for v in node]
        return node

    return rename(copy.deepcopy(raw))


def deep_merge(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    """Recursively overlay `override` on `base` without mutating either."""
    merged = copy.deepcopy(base)
    for key, value in (override or {}).items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def load_experiment(
    config_path: Optional[str] = None,
    overrides: Optional[Dict[str, Any]] = None,
    check_paths: bool = True,
) -> Tuple[ExperimentConfig, Dict[str, Any]]:
    """
    Packaged defaults, then the user document, then CLI overrides.

    Returns:
        (validated ExperimentConfig, merged parameter dict)
    """
    params = load_params(None)
    if config_path:
        params = deep_merge(params, load_params(config_path))
    params = deep_merge(params, overrides or {})
    return experiment_from_params(params, check_paths=check_paths), params
