"""Model and training configuration, TOML loading and flat-key overrides."""
from __future__ import annotations

import dataclasses
import sys
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, get_type_hints

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .encoding import FeatureConfig
from .unet import ConvPlan


@dataclass
class ModelConfig:
    dim: int = 2
    hidden: int = 128
    layers: int = 5  # message-passing layers per side; 2L in total
    mlp_layers: int = 2
    radius: float = 0.0  # 0 = derive from particle spacing (see model.configure)
    history: int = 6
    widths: tuple = (128, 256, 512)
    skip_a: tuple = ()
    skip_b: tuple = ()
    pool: str = "avg"
    resolution: tuple = ()
    bounds_min: tuple = ()
    bounds_max: tuple = ()
    periodic: tuple = ()
    scatter_kind: str = "cic"
    gather_kind: str = "cic"
    renormalize: bool = False
    n_types: int = 1
    type_dim: int = 16
    use_absolute_positions: bool = False
    use_external_force: bool = True
    normalize_edges: bool = True
    decoder_edges: str = "reencode"  # or "inherit"
    precision: str = "float32"

    def __post_init__(self):
        K = len(self.widths)
        self.widths = tuple(int(w) for w in self.widths)
        self.skip_a = tuple(bool(v) for v in self.skip_a) or (True,) * K
        self.skip_b = tuple(bool(v) for v in self.skip_b) or (True,) * K
        self.resolution = tuple(int(v) for v in self.resolution)
        self.bounds_min = tuple(float(v) for v in self.bounds_min)
        self.bounds_max = tuple(float(v) for v in self.bounds_max)
        self.periodic = tuple(bool(v) for v in self.periodic)
        if self.decoder_edges not in ("reencode", "inherit"):
            raise ValueError(f"decoder_edges must be 'reencode' or 'inherit', got {self.decoder_edges!r}")
        if self.precision not in ("float32", "float64"):
            raise ValueError(f"precision must be float32 or float64, got {self.precision!r}")
        if self.history < 2:
            raise ValueError("history must be at least 2")
        if self.radius < 0 or self.hidden < 1 or self.layers < 0:
            raise ValueError("radius must be non-negative, hidden width positive, layers non-negative")

    @property
    def features(self) -> FeatureConfig:
        return FeatureConfig(self.use_absolute_positions, self.use_external_force, self.normalize_edges,
                             self.type_dim)

    @property
    def plan(self) -> ConvPlan:
        return ConvPlan(self.widths, self.skip_a, self.skip_b, self.pool)

    @property
    def dtype(self):
        return np.dtype(self.precision)


@dataclass
class TrainConfig:
    lr_init: float = 5e-4
    lr_final: float = 1e-6
    decay_rate: float = 0.1
    decay_steps: float = 1e5
    batch_size: int = 4
    steps: int = 1000
    eval_interval: int = 250
    eval_windows: int = 8
    rollout_steps: int = 20
    noise_std: float = 0.0
    loss_mode: str = "position"
    seed: int = 0
    log_interval: int = 50
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    max_loss: float = 1e6

    def __post_init__(self):
        if self.lr_final > self.lr_init:
            raise ValueError("lr_final must not exceed lr_init")
        if self.decay_steps <= 0:
            raise ValueError("decay_steps must be positive")
        if self.loss_mode not in ("position", "acceleration"):
            raise ValueError(f"loss_mode must be 'position' or 'acceleration', got {self.loss_mode!r}")
        if self.batch_size < 1 or self.steps < 0:
            raise ValueError("batch_size must be >= 1 and steps >= 0")


def _field_kind(cls, name: str):
    return get_type_hints(cls)[name]


def parse_value(cls, name: str, raw: Any):
    """Coerce a TOML value or command-line string to the field's type."""
    kind = _field_kind(cls, name)
    if kind is tuple:
        if isinstance(raw, str):
            parts = [p.strip() for p in raw.split(",") if p.strip()]
        else:
            parts = list(raw)
        return tuple(_scalar(p) for p in parts)
    if kind is bool:
        if isinstance(raw, str):
            low = raw.lower()
            if low not in ("true", "false", "1", "0"):
                raise ValueError(f"{name}: expected a boolean, got {raw!r}")
            return low in ("true", "1")
        return bool(raw)
    if kind is int:
        value = float(raw) if isinstance(raw, str) else raw
        if float(value) != int(value):
            raise ValueError(f"{name}: expected an integer, got {raw!r}")
        return int(value)
    if kind is float:
        return float(raw)
    return str(raw)


def _scalar(text):
    if not isinstance(text, str):
        return text
    low = text.lower()
    if low in ("true", "false"):
        return low == "true"
    for conv in (int, float):
        try:
            return conv(text)
        except ValueError:
            pass
    return text


def build(cls, values: dict):
    names = {f.name for f in fields(cls)}
    unknown = sorted(set(values) - names)
    if unknown:
        raise KeyError(f"unknown {cls.__name__} keys: {unknown}")
    return cls(**{k: parse_value(cls, k, v) for k, v in values.items()})


def load_config(path) -> tuple[dict, dict]:
    """Read a flat TOML file with optional [model] and [train] tables.

    Top-level keys are routed to whichever dataclass declares them.
    """
    data = tomllib.loads(Path(path).read_text())
    model_keys = {f.name for f in fields(ModelConfig)}
    train_keys = {f.name for f in fields(TrainConfig)}
    model, train = dict(data.pop("model", {})), dict(data.pop("train", {}))
    for key, value in data.items():
        if key in model_keys:
            model[key] = value
        elif key in train_keys:
            train[key] = value
        else:
            raise KeyError(f"unknown config key {key!r}")
    return model, train


def to_dict(cfg) -> dict:
    return {k: list(v) if isinstance(v, tuple) else v for k, v in dataclasses.asdict(cfg).items()}
