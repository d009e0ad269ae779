"""Declarative run configuration: one JSON document covering every tunable.

Unknown keys and wrongly typed values are rejected before any work starts.
Any key can be overridden from the environment with the ``T4PDM_`` prefix and
``__`` between section and key, e.g. ``T4PDM_TRAIN__EPOCHS=20`` or
``T4PDM_SEED=3``. Values are parsed as JSON when possible.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .feature_pipeline import DEFAULT_VARIANCE_THRESHOLD
from .model import PRESETS

ENV_PREFIX = "T4PDM_"


class ConfigError(ValueError):
    pass


@dataclass
class DataSection:
    manifest: str | None = None


@dataclass
class SignalSection:
    window_len: int = 5000
    hop: int | None = None  # defaults to window_len


@dataclass
class FeatureSection:
    variance_threshold: float = DEFAULT_VARIANCE_THRESHOLD
    pca_k: int = 4500
    scale: bool = True
    # also apply the variance mask ahead of PCA in the PCA presets
    compose_fs_pca: bool = False


@dataclass
class ModelSection:
    preset: str = "transformer4b_pca"
    d_model: int = 32
    n_heads: int = 4
    d_ff: int = 64
    dropout_rate: float = 0.5
    sublayer_dropout: float = 0.0
    ln_eps: float = 1e-6
    token_dim: int = 25
    pad_features: bool = False


@dataclass
class TrainSection:
    epochs: int = 100
    batch_size: int = 32
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    early_stop_patience: int | None = None
    convergence_patience: int = 10
    convergence_tol: float = 1e-4


@dataclass
class SplitSection:
    train_frac: float = 0.576
    val_frac: float = 0.18
    test_frac: float | None = None


@dataclass
class SynthSection:
    n_classes: int = 7
    recordings_per_class: int = 70
    samples_per_recording: int = 5000
    sample_rate_hz: float = 10_000.0
    rotation_hz: list = field(default_factory=lambda: [29.5, 30.5])
    noise_std: float = 0.05
    seed: int | None = None  # falls back to the run seed
    signatures: dict | None = None


@dataclass
class TransferSection:
    source_bundle: str | None = None
    head_seed: int | None = None  # falls back to the run seed


@dataclass
class PathsSection:
    features: str | None = None  # default <out>/features/features.t4pd
    bundle: str | None = None  # default <out>/bundle/bundle.t4pd


@dataclass
class RunConfig:
    seed: int = 0
    data: DataSection = field(default_factory=DataSection)
    signal: SignalSection = field(default_factory=SignalSection)
    features: FeatureSection = field(default_factory=FeatureSection)
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainSection = field(default_factory=TrainSection)
    split: SplitSection = field(default_factory=SplitSection)
    synth: SynthSection = field(default_factory=SynthSection)
    transfer: TransferSection = field(default_factory=TransferSection)
    paths: PathsSection = field(default_factory=PathsSection)
    ablation_presets: list = field(default_factory=lambda: list(PRESETS))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def validate(self) -> "RunConfig":
        if self.model.preset not in PRESETS:
            raise ConfigError(f"model.preset: unknown preset {self.model.preset!r}")
        for p in self.ablation_presets:
            if p not in PRESETS:
                raise ConfigError(f"ablation_presets: unknown preset {p!r}")
        positive = [("signal.window_len", self.signal.window_len), ("features.pca_k", self.features.pca_k),
                    ("model.d_model", self.model.d_model), ("model.n_heads", self.model.n_heads),
                    ("model.d_ff", self.model.d_ff), ("model.token_dim", self.model.token_dim),
                    ("train.epochs", self.train.epochs), ("train.batch_size", self.train.batch_size)]
        for name, v in positive:
            if v < 1:
                raise ConfigError(f"{name} must be positive")
        if self.signal.window_len % 2:
            raise ConfigError("signal.window_len must be even")
        if self.signal.hop is not None and self.signal.hop < 1:
            raise ConfigError("signal.hop must be positive")
        if self.model.d_model % self.model.n_heads:
            raise ConfigError("model.d_model must be divisible by model.n_heads")
        if not 0 <= self.model.dropout_rate < 1 or not 0 <= self.model.sublayer_dropout < 1:
            raise ConfigError("dropout rates must be in [0, 1)")
        if self.train.learning_rate < 0:
            raise ConfigError("train.learning_rate must be non-negative")
        if self.features.variance_threshold < 0:
            raise ConfigError("features.variance_threshold must be non-negative")
        return self


def _type_ok(value: Any, annotation: str) -> bool:
    if value is None:
        return "None" in annotation
    if isinstance(value, bool):
        return "bool" in annotation
    if "float" in annotation and isinstance(value, (int, float)):
        return True
    if "int" in annotation and isinstance(value, int):
        return True
    if "str" in annotation and isinstance(value, str):
        return True
    if "list" in annotation and isinstance(value, list):
        return True
    if "dict" in annotation and isinstance(value, dict):
        return True
    return False


def _build(cls, data: dict, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where or 'config'}: expected an object")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(fields))
    if unknown:
        raise ConfigError(f"{where or 'config'}: unknown keys {unknown}")
    kwargs = {}
    for name, value in data.items():
        f = fields[name]
        key = f"{where}.{name}" if where else name
        if isinstance(f.default_factory, type) and dataclasses.is_dataclass(f.default_factory):
            kwargs[name] = _build(f.default_factory, value, key)
            continue
        if not _type_ok(value, str(f.type)):
            raise ConfigError(f"{key}: value {value!r} does not match type {f.type}")
        if "float" in str(f.type) and isinstance(value, int) and not isinstance(value, bool):
            value = float(value)
        kwargs[name] = value
    return cls(**kwargs)


def from_dict(data: dict) -> RunConfig:
    return _build(RunConfig, data, "").validate()


def _set_path(doc: dict, keys: list[str], value: Any) -> None:
    for k in keys[:-1]:
        doc = doc.setdefault(k, {})
        if not isinstance(doc, dict):
            raise ConfigError(f"env override targets non-section {k!r}")
    doc[keys[-1]] = value


def env_overrides(environ=None) -> dict:
    environ = os.environ if environ is None else environ
    doc: dict = {}
    for name, raw in sorted(environ.items()):
        if not name.startswith(ENV_PREFIX):
            continue
        keys = [k.lower() for k in name[len(ENV_PREFIX):].split("__")]
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        _set_path(doc, keys, value)
    return doc


def _merge(base: dict, extra: dict) -> dict:
    out = dict(base)
    for k, v in extra.items():
        out[k] = _merge(out[k], v) if isinstance(v, dict) and isinstance(out.get(k), dict) else v
    return out


def load_config(path: str | Path | None = None, seed: int | None = None, environ=None) -> RunConfig:
    """Config file, then environment overrides, then the --seed flag."""
    doc: dict = {}
    if path is not None:
        try:
            doc = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    doc = _merge(doc, env_overrides(environ))
    if seed is not None:
        doc["seed"] = seed
    return from_dict(doc)
