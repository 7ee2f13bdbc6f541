"""Strict TOML run configuration with dotted-key overrides."""
from __future__ import annotations

import sys
from dataclasses import dataclass, field, fields, asdict, replace
from pathlib import Path
from typing import Optional

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError
from .evaluator import EvalConfig
from .learners import LearnerConfig
from .objectives import MetaTrainConfig, PretrainConfig
from .world import MASK64, WorldConfig, derive_seed

SPLITS = ("train", "val", "test")
_SPAN = 1 << 40


@dataclass(frozen=True)
class SplitRanges:
    """Half-open ranges of episode indices per split; must not overlap."""

    train: tuple = (0, _SPAN)
    val: tuple = (_SPAN, 2 * _SPAN)
    test: tuple = (2 * _SPAN, 3 * _SPAN)

    def validate(self):
        spans = []
        for name in SPLITS:
            r = getattr(self, name)
            if len(r) != 2 or not (0 <= r[0] < r[1] <= MASK64 + 1):
                raise ConfigError(f"splits.{name} must be [start, stop) with 0 <= start < stop")
            spans.append((r[0], r[1], name))
        spans.sort()
        for (a0, a1, an), (b0, b1, bn) in zip(spans, spans[1:]):
            if b0 < a1:
                raise ConfigError(f"seed ranges of splits {an!r} and {bn!r} overlap")

    def to_dict(self):
        return {name: list(getattr(self, name)) for name in SPLITS}


@dataclass(frozen=True)
class RunConfig:
    world: WorldConfig = field(default_factory=WorldConfig)
    learner: LearnerConfig = field(default_factory=LearnerConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    splits: SplitRanges = field(default_factory=SplitRanges)
    meta_train: MetaTrainConfig = field(default_factory=MetaTrainConfig)
    pretrain: PretrainConfig = field(default_factory=PretrainConfig)
    seed: int = 0
    episodes: int = 20
    split: str = "test"
    output_dir: str = "runs/default"
    threads: int = 1

    def validate(self) -> "RunConfig":
        self.world.validate()
        self.learner.validate()
        self.eval.validate()
        self.splits.validate()
        self.meta_train.validate()
        self.pretrain.validate()
        if self.episodes <= 0:
            raise ConfigError("episodes must be positive")
        if self.split not in SPLITS:
            raise ConfigError(f"split must be one of {SPLITS}")
        if not 0 <= self.seed <= MASK64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        if self.threads <= 0:
            raise ConfigError("threads must be positive")
        return self

    def episode_seeds(self, split: Optional[str] = None, count: Optional[int] = None, offset: int = 0):
        split = split or self.split
        count = self.episodes if count is None else count
        start, stop = getattr(self.splits, split)
        if start + offset + count > stop:
            raise ConfigError(f"{count} episodes from offset {offset} exceed the {split} seed range")
        return [derive_seed(self.seed, start + offset + k) for k in range(count)]

    def echo(self) -> dict:
        """Config as plain data, minus fields that must not affect results."""
        return {
            "seed": self.seed,
            "episodes": self.episodes,
            "split": self.split,
            "world": self.world.to_dict(),
            "learner": self.learner.to_dict(),
            "eval": asdict(self.eval),
            "splits": self.splits.to_dict(),
            "meta_train": self.meta_train.to_dict(),
            "pretrain": self.pretrain.to_dict(),
        }


_SECTIONS = {
    "world": WorldConfig,
    "learner": LearnerConfig,
    "eval": EvalConfig,
    "splits": SplitRanges,
    "meta_train": MetaTrainConfig,
    "pretrain": PretrainConfig,
}
_TOP = {f.name for f in fields(RunConfig)} - set(_SECTIONS)


def _coerce(cls, name, value):
    ftype = {f.name: f.type for f in fields(cls)}[name]
    default = getattr(cls(), name)
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{cls.__name__}.{name} expects a boolean")
        return value
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{cls.__name__}.{name} expects an integer")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{cls.__name__}.{name} expects a number")
        return float(value)
    if isinstance(default, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{cls.__name__}.{name} expects a [start, stop] pair")
        return tuple(value)
    if isinstance(default, str) and not isinstance(value, str):
        raise ConfigError(f"{cls.__name__}.{name} expects a string ({ftype})")
    return value


def _build(cls, data: dict, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"[{where}] must be a table")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown key(s) in [{where}]: {', '.join(unknown)}")
    return cls(**{k: _coerce(cls, k, v) for k, v in data.items()})


def from_dict(data: dict) -> RunConfig:
    unknown = sorted(set(data) - _TOP - set(_SECTIONS))
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {', '.join(unknown)}")
    kwargs = {name: _build(cls, data.get(name, {}), name) for name, cls in _SECTIONS.items()}
    for k in _TOP:
        if k in data:
            kwargs[k] = _coerce(RunConfig, k, data[k])
    return RunConfig(**kwargs).validate()


def _parse_value(text: str):
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def apply_overrides(data: dict, overrides) -> dict:
    """Apply ``section.key=value`` (or ``key=value``) strings; values parse as TOML literals."""
    data = {k: (dict(v) if isinstance(v, dict) else v) for k, v in data.items()}
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, text = item.split("=", 1)
        parts = key.strip().split(".")
        if len(parts) == 1:
            data[parts[0]] = _parse_value(text)
        elif len(parts) == 2:
            data.setdefault(parts[0], {})[parts[1]] = _parse_value(text)
        else:
            raise ConfigError(f"override key {key!r} nests too deeply")
    return data


def load_config(path=None, overrides=()) -> RunConfig:
    data = {}
    if path is not None:
        try:
            data = tomllib.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
    return from_dict(apply_overrides(data, overrides))


def with_learner(config: RunConfig, name: str) -> RunConfig:
    return replace(config, learner=replace(config.learner, name=name)).validate()
