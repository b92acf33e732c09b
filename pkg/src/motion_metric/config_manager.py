# src/motion_metric/config_manager.py

"""Manages run configuration loading from profiles, YAML and .env files."""

import copy
import os
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path
from typing import Any, Dict, List, Mapping

import yaml
from dotenv import load_dotenv

from .encoder import EncoderConfig
from .errors import ConfigError
from .evaluator import DEFAULT_TPR_LEVELS, METRICS
from .logger_setup import get_logger
from .losses import KernelSpec, LossConfig
from .motion import PreprocessConfig
from .trainer import TrainConfig

logger = get_logger(__name__)

LABEL_KEYS = ("category", "subject")
STRIDE_MODES = ("gapped", "overlap")


@dataclass
class DataConfig:
    manifest: str | None = None
    synthetic_specs: str | None = None
    label_key: str = "category"
    window_len: int = 90
    window_gap: int = 30
    window_stride_mode: str = "gapped"
    min_split_seconds: float = 5.0
    test_gap_seconds: float = 1.0
    train_fraction: float = 0.5
    train_labels: List[str] | None = None
    min_sequences_per_label: int = 1
    drop_static_joints: bool = True
    probe_count: int = 0
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)

    def validate(self) -> None:
        if self.label_key not in LABEL_KEYS:
            raise ConfigError("data.label_key", f"expected one of {LABEL_KEYS}, got '{self.label_key}'")
        if self.window_len < 1:
            raise ConfigError("data.window_len", "must be >= 1")
        if self.window_gap < 0:
            raise ConfigError("data.window_gap", "must be >= 0")
        if self.window_stride_mode not in STRIDE_MODES:
            raise ConfigError("data.window_stride_mode", f"expected one of {STRIDE_MODES}")
        if not 0.0 <= self.train_fraction <= 1.0:
            raise ConfigError("data.train_fraction", "must be in [0, 1]")
        if self.min_sequences_per_label < 1:
            raise ConfigError("data.min_sequences_per_label", "must be >= 1")
        if self.preprocess.target_rate_hz <= 0:
            raise ConfigError("data.preprocess.target_rate_hz", "must be positive")


@dataclass
class EvalConfig:
    metrics: List[str] = field(default_factory=lambda: ["learned", "dtw"])
    tpr_levels: List[float] = field(default_factory=lambda: list(DEFAULT_TPR_LEVELS))
    k_neighbors: int = 4
    dtw_local_cost: str = "euclidean"
    attention_subsample: int = 4
    cluster_seed: int = 0

    def validate(self) -> None:
        unknown = [m for m in self.metrics if m not in METRICS]
        if unknown or not self.metrics:
            raise ConfigError("evaluation.metrics", f"expected a non-empty subset of {METRICS}, got {self.metrics}")
        if any(not 0.0 < t <= 1.0 for t in self.tpr_levels):
            raise ConfigError("evaluation.tpr_levels", "levels must be in (0, 1]")
        if self.k_neighbors < 1:
            raise ConfigError("evaluation.k_neighbors", "must be >= 1")
        if self.attention_subsample < 1:
            raise ConfigError("evaluation.attention_subsample", "must be >= 1")


@dataclass
class OutputElements:
    save_json_report: bool = True
    save_csv_table: bool = True
    save_excel_report: bool = True
    save_markdown_table: bool = True
    save_attention: bool = True
    save_embeddings: bool = False


@dataclass
class RunConfig:
    profile: str = "desk"
    seed: int = 0
    out_dir: str = "out"
    log_level: str = "INFO"
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    data: DataConfig = field(default_factory=DataConfig)
    evaluation: EvalConfig = field(default_factory=EvalConfig)
    output_elements: OutputElements = field(default_factory=OutputElements)

    def validate(self) -> None:
        if self.profile not in PROFILES:
            raise ConfigError("profile", f"expected one of {sorted(PROFILES)}, got '{self.profile}'")
        self.encoder.validate()
        self.train.validate()
        self.loss.validate()
        self.data.validate()
        self.evaluation.validate()
        if self.train.seed != self.seed:
            raise ConfigError("train.seed", "must equal the run seed")
        if self.loss.negative_classes != self.train.negative_classes:
            raise ConfigError("loss.negative_classes", "must equal train.negative_classes")

    def to_dict(self) -> Dict[str, Any]:
        return _plain(asdict(self))

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "RunConfig":
        return _build(cls, data, "")


# Every profile pins the full set of training hyperparameters.
PROFILES: Dict[str, Dict[str, Any]] = {
    "paper": {
        "encoder": {"hidden_size": 128, "embedding_size": 128, "attention_width": 10, "fc_width": 320, "dropout_rate": 0.5},
        "train": {
            "total_updates": 5000, "lr0": 0.0001, "decay_rate": 0.96, "decay_every": 50, "momentum": 0.9,
            "clip_norm": 25.0, "samples_per_class": 25, "negative_classes": 5, "checkpoint_every": 500,
        },
        "loss": {"loss_kind": "mmd_nca", "negative_classes": 5,
                 "kernel": {"family": "rbf", "bandwidths": [1.0, 2.0, 4.0, 8.0, 16.0]}},
        "data": {"window_len": 90, "window_gap": 30},
    },
    "desk": {
        "encoder": {"hidden_size": 32, "embedding_size": 32, "attention_width": 10, "fc_width": 64, "dropout_rate": 0.5},
        "train": {
            "total_updates": 1000, "lr0": 0.0001, "decay_rate": 0.96, "decay_every": 50, "momentum": 0.9,
            "clip_norm": 25.0, "samples_per_class": 8, "negative_classes": 3, "checkpoint_every": 250,
        },
        "loss": {"loss_kind": "mmd_nca", "negative_classes": 3,
                 "kernel": {"family": "rbf", "bandwidths": [1.0, 2.0, 4.0, 8.0, 16.0]}},
        "data": {"window_len": 45, "window_gap": 15},
    },
}

# Global config, to be loaded by load_app_config
APP_CONFIG: RunConfig | None = None


def _plain(value: Any) -> Any:
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return value


def _build(cls: type, data: Mapping[str, Any] | None, prefix: str) -> Any:
    """Instantiates a (nested) config dataclass, rejecting unknown keys."""
    data = dict(data or {})
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"{prefix}{unknown[0]}", "unknown configuration key")
    kwargs: Dict[str, Any] = {}
    for name, value in data.items():
        default = known[name].default_factory() if callable(known[name].default_factory) else known[name].default
        if is_dataclass(default):
            if not isinstance(value, Mapping):
                raise ConfigError(f"{prefix}{name}", "expected a mapping")
            kwargs[name] = _build(type(default), value, f"{prefix}{name}.")
        elif isinstance(default, tuple) and isinstance(value, list):
            kwargs[name] = tuple(value)
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as e:
        raise ConfigError(prefix.rstrip(".") or cls.__name__, str(e)) from e


def _deep_merge(base: Dict[str, Any], update: Mapping[str, Any]) -> Dict[str, Any]:
    merged = copy.deepcopy(base)
    for key, value in update.items():
        if isinstance(value, Mapping) and isinstance(merged.get(key), dict):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def profile_defaults(profile: str) -> Dict[str, Any]:
    if profile not in PROFILES:
        raise ConfigError("profile", f"expected one of {sorted(PROFILES)}, got '{profile}'")
    return _deep_merge(RunConfig(profile=profile).to_dict(), PROFILES[profile])


def load_app_config(
    config_path: Path | None = None,
    profile: str | None = None,
    overrides: Mapping[str, Any] | None = None,
) -> RunConfig:
    """Resolves profile defaults, then the YAML file, then explicit overrides; populates APP_CONFIG.

    MOTION_METRIC_OUTPUT_ROOT (from the environment or a .env file) sets the
    output directory when neither the YAML nor the overrides do.
    """
    global APP_CONFIG

    load_dotenv()

    from_yaml: Dict[str, Any] = {}
    if config_path is not None:
        if not config_path.is_file():
            raise FileNotFoundError(f"Configuration file not found: {config_path}")
        with open(config_path, "r", encoding="utf-8") as f:
            from_yaml = yaml.safe_load(f) or {}
        if not isinstance(from_yaml, dict):
            raise ConfigError("config", f"{config_path} must hold a mapping")

    overrides = dict(overrides or {})
    chosen = profile or overrides.get("profile") or from_yaml.get("profile") or "desk"
    resolved = _deep_merge(profile_defaults(chosen), from_yaml)
    resolved = _deep_merge(resolved, overrides)
    resolved["profile"] = chosen

    output_root = os.getenv("MOTION_METRIC_OUTPUT_ROOT", "").strip()
    if output_root and "out_dir" not in from_yaml and "out_dir" not in overrides:
        resolved["out_dir"] = output_root

    # The run seed and train.negative_classes drive their mirrored fields.
    resolved["train"]["seed"] = resolved["seed"]
    resolved["loss"]["negative_classes"] = resolved["train"]["negative_classes"]

    config = RunConfig.from_dict(resolved)
    config.validate()
    APP_CONFIG = config
    return APP_CONFIG


def get_config() -> RunConfig:
    """Returns the loaded run configuration."""
    if APP_CONFIG is None:
        raise RuntimeError("Configuration has not been loaded. Call load_app_config() first.")
    return APP_CONFIG


def write_resolved_config(config: RunConfig, output_dir: Path) -> Path:
    """Writes the resolved configuration as `resolved_config.yaml`."""
    output_dir.mkdir(parents=True, exist_ok=True)
    path = output_dir / "resolved_config.yaml"
    with open(path, "w", encoding="utf-8") as f:
        yaml.safe_dump(config.to_dict(), f, sort_keys=False)
    logger.info(f"Resolved configuration written to {path}")
    return path


def read_resolved_config(path: Path) -> RunConfig:
    if not path.is_file():
        raise FileNotFoundError(f"Configuration file not found: {path}")
    with open(path, "r", encoding="utf-8") as f:
        config = RunConfig.from_dict(yaml.safe_load(f) or {})
    config.validate()
    return config
