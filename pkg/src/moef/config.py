"""Run configuration: one JSON document with a section per component.

Unknown keys anywhere are rejected; missing keys take their defaults. The
resolved document (:func:`dump_config`) is itself a valid input.
"""
from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from typing import Any, Optional

from moef.errors import ConfigError
from moef.experts import ExpertConfig, FeatureSchema
from moef.mixture import ModelConfig
from moef.orn import EncoderConfig
from moef.signals import WindowingConfig
from moef.synthgen import WorldConfig

CONFIG_ENV = "MOEF_CONFIG"


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    batch_size: int = 256
    epochs: int = 1
    seed: int = 0
    eval_every: int = 0
    trace_sample: int = 8192

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not self.learning_rate >= 0:
            raise ConfigError("learning_rate must be >= 0")
        if self.epochs < 0 or self.eval_every < 0 or self.trace_sample < 1:
            raise ConfigError("epochs and eval_every must be >= 0, trace_sample >= 1")


@dataclass(frozen=True)
class ModelSection:
    variant: str = "full"
    num_experts: int = 2
    gate_hidden: int = 64
    head_sizes: tuple = (144, 64, 1)


@dataclass(frozen=True)
class PathsConfig:
    data_dir: str = "data"
    run_dir: str = "runs/default"


@dataclass(frozen=True)
class RunConfig:
    world: WorldConfig = field(default_factory=WorldConfig)
    schema: FeatureSchema = field(default_factory=lambda: FeatureSchema(max_sequence_length=20))
    windowing: WindowingConfig = field(default_factory=WindowingConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    expert: ExpertConfig = field(default_factory=ExpertConfig)
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainConfig = field(default_factory=TrainConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            variant=self.model.variant,
            num_experts=self.model.num_experts,
            gate_hidden=self.model.gate_hidden,
            head_sizes=self.model.head_sizes,
            encoder=self.encoder,
            expert=self.expert,
            windowing=self.windowing,
            schema=self.schema,
            num_signals=len(self.world.signals),
        )


def to_dict(obj) -> Any:
    """Plain JSON-ready structure for a (nested) config dataclass."""
    if dataclasses.is_dataclass(obj):
        return {f.name: to_dict(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, (list, tuple)):
        return [to_dict(v) for v in obj]
    if isinstance(obj, dict):
        return {k: to_dict(v) for k, v in obj.items()}
    return obj


def _default_of(f: dataclasses.Field):
    if f.default is not dataclasses.MISSING:
        return f.default
    if f.default_factory is not dataclasses.MISSING:
        return f.default_factory()
    return dataclasses.MISSING


def from_dict(cls, data: Optional[dict], where: str = ""):
    """Build ``cls`` from ``data``; nested config sections recurse, unknown keys raise."""
    data = data or {}
    if not isinstance(data, dict):
        raise ConfigError(f"{where or 'config'}: expected an object, got {type(data).__name__}")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(fields))
    if unknown:
        raise ConfigError(f"unknown config key(s) {', '.join(where + k for k in unknown)}")
    kwargs = {}
    for name, value in data.items():
        default = _default_of(fields[name])
        if dataclasses.is_dataclass(default) and not isinstance(default, type):
            value = from_dict(type(default), value, f"{where}{name}.")
        elif isinstance(default, tuple) and isinstance(value, list):
            value = tuple(value)
        kwargs[name] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{where or 'config'}: {exc}") from None


def load_config(path: Optional[str] = None) -> RunConfig:
    """Read a JSON config (``path``, else ``$MOEF_CONFIG``, else defaults)."""
    path = path or os.environ.get(CONFIG_ENV)
    if not path:
        return RunConfig()
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file {path} does not exist") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return from_dict(RunConfig, data)


def dump_config(cfg: RunConfig) -> str:
    return json.dumps(to_dict(cfg), indent=2, sort_keys=True)


def override(cfg, dotted: str, value):
    """Copy of ``cfg`` with ``section.key`` (any depth) set to ``value``."""
    head, _, rest = dotted.partition(".")
    names = {f.name for f in dataclasses.fields(cfg)}
    if head not in names:
        raise ConfigError(f"unknown config key {dotted!r}")
    if rest:
        return dataclasses.replace(cfg, **{head: override(getattr(cfg, head), rest, value)})
    return from_dict(type(cfg), {**to_dict(cfg), head: value})


def describe_keys(cls=RunConfig, prefix: str = "") -> list:
    """``(dotted key, default)`` for every leaf key; used by ``--help``."""
    out = []
    for f in dataclasses.fields(cls):
        default = _default_of(f)
        if dataclasses.is_dataclass(default) and not isinstance(default, type):
            out.extend(describe_keys(type(default), f"{prefix}{f.name}."))
        else:
            out.append((prefix + f.name, to_dict(default)))
    return out
