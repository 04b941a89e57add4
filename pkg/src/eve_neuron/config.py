"""Run configuration: dataclass sections, INI files and dotted-key overrides.

Precedence is built-in defaults < config file < ``--set section.key=value``.
"""

from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .ar import ArConfig
from .controllers import BandConfig
from .data import DataConfig
from .diagnostics import DiagConfig

MODEL_KINDS = ("eve", "deterministic")


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    kind: str = "eve"
    n_units: int = 32
    init_scale: float = 0.3
    readout_scale: float = 1.0
    sigma_init: float = 0.5
    freeze_sigma: bool = False
    sigma_floor: float = 1e-4

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ValueError(f"model.kind must be one of {MODEL_KINDS}")
        if self.n_units < 1:
            raise ValueError("model.n_units must be >= 1")


@dataclass
class TrainConfig:
    lr: float = 3e-3
    batch_size: int = 64
    eval_batch_size: int = 256
    max_epochs: int = 30
    grad_clip_norm: float = 1.0
    beta: float = 0.01
    warmup_steps: int = 0
    seed: int = 0
    select_lambda_out: float = 0.1
    select_lambda_band: float = 0.1
    early_stop_patience: int = 10
    max_nonfinite: int = 10

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError("train.lr must be positive")
        if self.batch_size < 1 or self.eval_batch_size < 1:
            raise ValueError("train.batch_size must be >= 1")
        if not self.grad_clip_norm > 0:
            raise ValueError("train.grad_clip_norm must be positive")
        if self.max_epochs < 1:
            raise ValueError("train.max_epochs must be >= 1")


SECTIONS = {
    "data": DataConfig,
    "model": ModelConfig,
    "control": BandConfig,
    "ar": ArConfig,
    "train": TrainConfig,
    "diag": DiagConfig,
}


@dataclass
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    control: BandConfig = field(default_factory=BandConfig)
    ar: ArConfig = field(default_factory=ArConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    diag: DiagConfig = field(default_factory=DiagConfig)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        return apply_overrides(cls(), {f"{s}.{k}": v for s, sec in d.items() for k, v in sec.items()})

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def with_overrides(self, overrides: dict) -> "RunConfig":
        return apply_overrides(self, overrides)


def _coerce(raw, default, key: str):
    if not isinstance(raw, str):
        if isinstance(default, bool):
            return bool(raw)
        if isinstance(default, float) and isinstance(raw, int):
            return float(raw)
        return raw
    s = raw.strip()
    try:
        if isinstance(default, bool):
            low = s.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(s)
        if isinstance(default, int):
            return int(s)
        if isinstance(default, float):
            return float(s)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {type(default).__name__}") from None
    return s


def apply_overrides(cfg: RunConfig, overrides: dict) -> RunConfig:
    """Return a copy of ``cfg`` with ``{"section.key": value}`` applied and validated."""
    sections = {name: asdict(getattr(cfg, name)) for name in SECTIONS}
    for key, raw in overrides.items():
        if "." not in key:
            raise ConfigError(f"{key}: expected section.key")
        sec, name = key.split(".", 1)
        if sec not in SECTIONS:
            raise ConfigError(f"{key}: unknown section {sec!r}")
        if name not in sections[sec]:
            raise ConfigError(f"{key}: unknown key")
        sections[sec][name] = _coerce(raw, sections[sec][name], key)
    built = {}
    for sec, klass in SECTIONS.items():
        try:
            built[sec] = replace(getattr(cfg, sec), **sections[sec])
        except ValueError as e:
            raise ConfigError(f"{sec}: {e}") from None
    return RunConfig(**built)


def read_ini(path) -> dict:
    """Flat ``section.key -> raw string`` view of an INI file."""
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        with Path(path).open() as fh:
            parser.read_file(fh)
    except (OSError, configparser.Error) as e:
        raise ConfigError(f"{path}: {e}") from None
    return {f"{s}.{k}": v for s in parser.sections() for k, v in parser[s].items()}


def parse_set(items) -> dict:
    out = {}
    for item in items or []:
        if "=" not in item:
            raise ConfigError(f"--set {item!r}: expected key=value")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    cfg = RunConfig()
    if path:
        cfg = apply_overrides(cfg, read_ini(path))
    if overrides:
        cfg = apply_overrides(cfg, overrides)
    return cfg


def field_names(section: str) -> list[str]:
    return [f.name for f in fields(SECTIONS[section])]
