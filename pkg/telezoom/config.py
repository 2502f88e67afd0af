# -*- coding: utf-8 -*-
"""
🔧 Configuration
Environment settings and the resolved run configuration
"""

import os
from dataclasses import asdict, dataclass, field, fields, is_dataclass, replace
from pathlib import Path
from typing import Any, Dict, Mapping, Optional

import yaml
from dotenv import load_dotenv

from telezoom.errors import ConfigError

# Load environment variables
load_dotenv()

PACKAGE_ROOT = Path(__file__).resolve().parent.parent


class Config:
    """Environment Configuration Class"""

    # ═══════════════════════════════════════════════
    # 📁 OUTPUT LOCATIONS
    # ═══════════════════════════════════════════════
    OUTPUT_ROOT = os.getenv("TELEZOOM_OUTPUT_ROOT", "runs")
    PRESETS_FILE = os.getenv("TELEZOOM_PRESETS", str(PACKAGE_ROOT / "config" / "presets.yaml"))
    CONSTRAINTS_DIR = os.getenv("TELEZOOM_CONSTRAINTS_DIR", str(PACKAGE_ROOT / "config" / "constraints"))

    # ═══════════════════════════════════════════════
    # ⚙️ EXECUTION
    # ═══════════════════════════════════════════════
    WORKERS = int(os.getenv("TELEZOOM_WORKERS", "4"))
    DEVICE = os.getenv("TELEZOOM_DEVICE", "cpu")
    CEM_TIME_BUDGET_S = float(os.getenv("CEM_TIME_BUDGET_S", "10"))

    # ═══════════════════════════════════════════════
    # 📝 LOGGING
    # ═══════════════════════════════════════════════
    LOG_LEVEL = os.getenv("LOG_LEVEL", "INFO")
    LOG_FILE = os.getenv("LOG_FILE", "telezoom.log")

    @classmethod
    def validate(cls):
        """Validate environment settings"""
        if cls.WORKERS < 1:
            raise ConfigError(f"TELEZOOM_WORKERS must be >= 1, got {cls.WORKERS}")
        if cls.CEM_TIME_BUDGET_S <= 0:
            raise ConfigError(f"CEM_TIME_BUDGET_S must be positive, got {cls.CEM_TIME_BUDGET_S}")
        if cls.LOG_LEVEL.upper() not in {"DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"}:
            raise ConfigError(f"Unknown LOG_LEVEL: {cls.LOG_LEVEL}")
        return True


# Global config instance
config = Config()

# Validate on import
config.validate()


# ═══════════════════════════════════════════════════════════════
# 🧪 RUN CONFIGURATION
# ═══════════════════════════════════════════════════════════════

@dataclass
class DataConfig:
    preset: str = "bursty"
    case: str = "queue"
    zoom: int = 50
    context_len: int = 5
    stride: Optional[int] = None
    traces_per_config: int = 10
    periodic_offset: int = 0

    def __post_init__(self):
        if self.case not in {"queue", "link"}:
            raise ConfigError(f"Unknown dataset case: {self.case}")
        if self.zoom < 2 or self.context_len < 1:
            raise ConfigError("zoom must be >= 2 and context_len >= 1")
        if not 0 <= self.periodic_offset < self.zoom:
            raise ConfigError(f"periodic_offset {self.periodic_offset} outside [0, {self.zoom})")


@dataclass
class ModelConfig:
    layers: int = 3
    width: int = 128
    heads: int = 4
    ff_width: int = 256
    dropout: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.width % self.heads:
            raise ConfigError(f"model width {self.width} not divisible by {self.heads} heads")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")


@dataclass
class TrainConfig:
    epochs: int = 40
    batch_size: int = 64
    lr: float = 1e-3
    patience: int = 5
    emd_weight: float = 1.0

    def __post_init__(self):
        if self.emd_weight < 0:
            raise ConfigError("emd_weight must be >= 0")
        if self.batch_size < 1 or self.epochs < 1:
            raise ConfigError("epochs and batch_size must be >= 1")


@dataclass
class KalConfig:
    mu0: float = 1e-3
    mu_mult: float = 1.5
    saturation_tol: float = 0.01
    max_outer: int = 10
    sharpness: float = 50.0

    def __post_init__(self):
        if self.mu0 <= 0 or self.mu_mult <= 0:
            raise ConfigError("mu0 and mu_mult must be positive")
        if self.sharpness <= 0:
            raise ConfigError("sharpness must be positive")


@dataclass
class RefineConfig:
    enabled: bool = False
    theta_far: float = 0.5
    theta_close: float = 0.1


@dataclass
class CemConfig:
    enabled: bool = True
    time_budget_s: float = config.CEM_TIME_BUDGET_S
    fallback: str = "drop_operational"
    channel_bound: Optional[float] = None

    def __post_init__(self):
        if self.fallback not in {"drop_operational", "none"}:
            raise ConfigError(f"Unknown CEM fallback policy: {self.fallback}")


@dataclass
class RunConfig:
    seed: int = 7
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    kal: KalConfig = field(default_factory=KalConfig)
    refine: RefineConfig = field(default_factory=RefineConfig)
    cem: CemConfig = field(default_factory=CemConfig)
    burst_fraction: float = 0.5
    constraint_file: Optional[str] = None
    output_dir: Optional[str] = None

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "RunConfig":
        return _build(cls, data, prefix="")

    @classmethod
    def load(cls, path: str) -> "RunConfig":
        """Load a YAML run config; missing keys fall back to defaults"""
        try:
            with open(path, encoding="utf-8") as fh:
                data = yaml.safe_load(fh) or {}
        except FileNotFoundError as e:
            raise ConfigError(f"Run config not found: {path}") from e
        except yaml.YAMLError as e:
            raise ConfigError(f"Run config {path} is not valid YAML: {e}") from e
        if not isinstance(data, dict):
            raise ConfigError(f"Run config {path} must be a mapping")
        return cls.from_dict(data)

    def with_overrides(self, overrides: Mapping[str, Any]) -> "RunConfig":
        """
        Apply dotted-key overrides, e.g. {"data.zoom": 100}
        None values are skipped so unset CLI flags keep the file value
        """
        cfg = self
        for key, value in overrides.items():
            if value is not None:
                cfg = _replace_dotted(cfg, key.split("."), value)
        return cfg


def _build(cls, data: Mapping[str, Any], prefix: str):
    known = {f.name: f for f in fields(cls)}
    unknown = set(data) - set(known)
    if unknown:
        raise ConfigError(f"Unknown config keys: {', '.join(prefix + k for k in sorted(unknown))}")
    kwargs = {}
    for name, value in data.items():
        default = getattr(cls(), name) if name in known else None
        if is_dataclass(default) and isinstance(value, Mapping):
            kwargs[name] = _build(type(default), value, prefix=f"{prefix}{name}.")
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except TypeError as e:
        raise ConfigError(f"Bad config section {prefix or 'root'}: {e}") from e


def _replace_dotted(obj, path, value):
    head, rest = path[0], path[1:]
    if not hasattr(obj, head):
        raise ConfigError(f"Unknown config key: {head}")
    if rest:
        return replace(obj, **{head: _replace_dotted(getattr(obj, head), rest, value)})
    return replace(obj, **{head: value})
