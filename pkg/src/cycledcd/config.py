"""Declarative run configuration: one YAML document mapped onto nested dataclasses.

Unknown keys are rejected, every value is type-checked, and ``--set a.b=value``
style overrides are applied before validation.
"""
from __future__ import annotations

import dataclasses
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .losses import LossWeights
from .models import DcdConfig, DiscriminatorConfig, GeneratorConfig, ModelConfig
from .spectral import StftParams
from .training import OptimizerConfig, ScheduleConfig, TrainConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PathsConfig:
    train_manifest: str = "data/train.jsonl"
    valid_manifest: str | None = None
    out_dir: str = "runs/default"


@dataclass(frozen=True)
class RunConfig:
    stft: StftParams = field(default_factory=StftParams)
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    discriminator: DiscriminatorConfig = field(default_factory=DiscriminatorConfig)
    dcd: DcdConfig = field(default_factory=DcdConfig)
    losses: LossWeights = field(default_factory=LossWeights)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)
    seed: int = 0

    def model_config(self) -> ModelConfig:
        return ModelConfig(self.generator, self.discriminator, self.dcd, self.stft.n_bins)

    def train_config(self) -> TrainConfig:
        return TrainConfig(dataclasses.replace(self.schedule, seed=self.seed), self.optimizer, self.losses)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["schedule"].pop("seed")
        return _plain(d)


def _plain(v):
    if isinstance(v, dict):
        return {k: _plain(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    return v


# fields that exist on the dataclasses but are owned elsewhere in the document
_HIDDEN = {(ScheduleConfig, "seed")}


def _coerce(tp, value, where: str):
    origin = typing.get_origin(tp)
    if origin in (typing.Union, types.UnionType):
        args = typing.get_args(tp)
        if value is None and type(None) in args:
            return None
        inner = [a for a in args if a is not type(None)]
        return _coerce(inner[0], value, where)
    if dataclasses.is_dataclass(tp):
        return build(tp, value, where)
    if tp is tuple or origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{where}: expected a list, got {value!r}")
        return tuple(_coerce(int, v, f"{where}[{i}]") if isinstance(v, (int, float)) else v
                     for i, v in enumerate(value))
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false, got {value!r}")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return int(value)
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string, got {value!r}")
        return value
    return value


def build(cls, data, where: str = "config"):
    """Instantiate dataclass ``cls`` from a mapping, rejecting unknown keys."""
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected a mapping, got {type(data).__name__}")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls) if (cls, f.name) not in _HIDDEN}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {unknown}")
    kwargs = {k: _coerce(hints[k], v, f"{where}.{k}") for k, v in data.items()}
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def apply_overrides(doc: dict, overrides: list[str]) -> dict:
    """``a.b=value`` pairs; values are parsed as YAML scalars or flow lists."""
    doc = dict(doc or {})
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key.path=value")
        key, raw = item.split("=", 1)
        parts = key.strip().split(".")
        node = doc
        for p in parts[:-1]:
            nxt = node.get(p)
            nxt = dict(nxt) if isinstance(nxt, dict) else {}
            node[p] = nxt
            node = nxt
        node[parts[-1]] = yaml.safe_load(raw)
    return doc


def load_config(path=None, overrides: list[str] | None = None) -> RunConfig:
    doc: dict = {}
    if path is not None:
        try:
            doc = yaml.safe_load(Path(path).read_text()) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return build(RunConfig, apply_overrides(doc, overrides or []))


def dump_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False, default_flow_style=None)
