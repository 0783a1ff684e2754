"""Run configuration: defaults, YAML files, ``TASIF_`` environment overrides and flags.

Precedence, lowest first: built-in defaults, the config file, environment
variables, command-line overrides. Keys are dotted paths such as
``train.lr`` or ``model.d``; the matching environment variable is
``TASIF_TRAIN_LR`` / ``TASIF_MODEL_D``.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import yaml

from .errors import ConfigError
from .losses import LossWeights
from .model import ModelConfig
from .pipeline import Schema

ENV_PREFIX = "TASIF_"


def desk_model() -> ModelConfig:
    return ModelConfig(d=64, n=64, L=2, heads=2)


@dataclass
class DataSection:
    path: str | None = None
    user_column: str = "user_id"
    item_column: str = "item_id"
    timestamp_column: str = "timestamp"
    attributes: list[str] = field(default_factory=list)
    k_core: int = 5
    min_timestamp: int | None = None
    cache_dir: str | None = None

    def schema(self) -> Schema:
        return Schema(self.user_column, self.item_column, self.timestamp_column, tuple(self.attributes))


@dataclass
class TrainSection:
    lr: float = 1e-4
    batch_size: int = 256
    epochs: int = 200
    patience: int = 10
    weight_decay: float = 0.0
    seed: int = 0
    lambda1: float = 1.0
    lambda2: float = 0.1
    lambda3: float = 10.0
    temperature: float = 0.07
    log_every: int = 1
    eval_every: int = 1

    def loss_weights(self) -> LossWeights:
        return LossWeights(self.lambda1, self.lambda2, self.lambda3, self.temperature)


@dataclass
class EvalSection:
    beta: float = 0.3
    cutoffs: list[int] = field(default_factory=lambda: [10, 20])
    mask_history: bool = False
    batch_size: int = 512


@dataclass
class SweepSection:
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])
    beta_grid: list[float] = field(default_factory=lambda: [0.1, 0.2, 0.3, 0.4, 0.5])
    span_grid: list[int] = field(default_factory=lambda: [7, 30, 90, 180, 365])


@dataclass
class RunConfig:
    data: DataSection = field(default_factory=DataSection)
    model: ModelConfig = field(default_factory=desk_model)
    train: TrainSection = field(default_factory=TrainSection)
    eval: EvalSection = field(default_factory=EvalSection)
    sweep: SweepSection = field(default_factory=SweepSection)
    output_dir: str = "runs/default"

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> "RunConfig":
        return _build(cls, raw, "")

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_yaml(), encoding="utf-8")

    def replace(self, **overrides: Any) -> "RunConfig":
        """Copy with dotted-path overrides, e.g. ``replace(**{"model.use_tsp": False})``."""
        return self.from_dict(apply_overrides(self.to_dict(), overrides))


def _build(cls, raw: Mapping[str, Any], where: str):
    if not isinstance(raw, Mapping):
        raise ConfigError(f"{where or 'config'} must be a mapping, got {type(raw).__name__}")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(raw) - set(fields)
    if unknown:
        raise ConfigError(f"unknown config key(s) {sorted(unknown)} in {where or 'config'}")
    kwargs = {}
    for name, value in raw.items():
        sub = _SECTIONS.get((cls, name))
        kwargs[name] = _build(sub, value, f"{where}{name}.") if sub is not None else value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


_SECTIONS = {
    (RunConfig, "data"): DataSection,
    (RunConfig, "model"): ModelConfig,
    (RunConfig, "train"): TrainSection,
    (RunConfig, "eval"): EvalSection,
    (RunConfig, "sweep"): SweepSection,
}


def config_keys() -> list[str]:
    """Every dotted key of a :class:`RunConfig`."""
    keys = []
    for name, value in RunConfig().to_dict().items():
        if isinstance(value, dict):
            keys.extend(f"{name}.{k}" for k in value)
        else:
            keys.append(name)
    return keys


def parse_value(text: str) -> Any:
    """Interpret a string override with YAML scalar/list rules (``1e-3``, ``true``, ``[1, 2]``)."""
    try:
        value = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse value {text!r}: {exc}") from exc
    if isinstance(value, str):
        try:
            return float(value)  # YAML 1.1 reads "1e-3" as a string
        except ValueError:
            return value
    return value


def apply_overrides(tree: dict, overrides: Mapping[str, Any]) -> dict:
    tree = {k: (dict(v) if isinstance(v, dict) else v) for k, v in tree.items()}
    for key, value in overrides.items():
        parts = key.split(".")
        node = tree
        for part in parts[:-1]:
            if not isinstance(node.get(part), dict):
                raise ConfigError(f"unknown config key {key!r}")
            node = node[part]
        if parts[-1] not in node:
            raise ConfigError(f"unknown config key {key!r}")
        node[parts[-1]] = value
    return tree


def env_overrides(environ: Mapping[str, str] | None = None) -> dict[str, Any]:
    environ = os.environ if environ is None else environ
    by_env = {ENV_PREFIX + k.replace(".", "_").upper(): k for k in config_keys()}
    out = {}
    for var, text in environ.items():
        if var.startswith(ENV_PREFIX):
            if var not in by_env:
                raise ConfigError(f"environment variable {var} matches no config key")
            out[by_env[var]] = parse_value(text)
    return out


def load_config(path: str | Path | None = None, overrides: Mapping[str, Any] | None = None,
                environ: Mapping[str, str] | None = None) -> RunConfig:
    """Resolve a run configuration from defaults, file, environment and explicit overrides."""
    tree = RunConfig().to_dict()
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file {p} does not exist")
        try:
            loaded = yaml.safe_load(p.read_text(encoding="utf-8")) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"{p}: {exc}") from exc
        if not isinstance(loaded, dict):
            raise ConfigError(f"{p}: top level must be a mapping")
        flat = {}
        for section, value in loaded.items():
            if isinstance(value, dict) and isinstance(tree.get(section), dict):
                flat.update({f"{section}.{k}": v for k, v in value.items()})
            else:
                flat[section] = value
        tree = apply_overrides(tree, flat)
    tree = apply_overrides(tree, env_overrides(environ))
    tree = apply_overrides(tree, overrides or {})
    return RunConfig.from_dict(tree)
