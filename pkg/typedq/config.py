#!/usr/bin/env python3
"""
Run configuration: per-section dataclasses, TOML files and overrides.

Layers are applied in order, later ones winning:
defaults < preset < TOML file < ``--set section.key=value`` < explicit flags.
"""

import logging
import sys
from dataclasses import MISSING, asdict, dataclass, field, fields, replace
from typing import Any, Dict, List, Mapping, Optional

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from typedq.corpus import DEFAULT_MAX_LEN, DEFAULT_UNIVERSAL_THRESHOLD
from typedq.errors import DataIOError, TypedQError, UsageError
from typedq.file_ops import read_bytes
from typedq.model import DEFAULT_MAX_GEN_LEN, ModelConfig
from typedq.pmi import DEFAULT_TOPIC_COUNT
from typedq.trainer import TrainConfig

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CorpusConfig:
    max_len: int = DEFAULT_MAX_LEN
    universal_threshold: int = DEFAULT_UNIVERSAL_THRESHOLD
    synth_size: int = 2000


@dataclass(frozen=True)
class PmiConfig:
    min_count: int = 1
    n_topics: int = DEFAULT_TOPIC_COUNT


@dataclass(frozen=True)
class EvalConfig:
    max_gen_len: int = DEFAULT_MAX_GEN_LEN
    sample: bool = False
    distinct2_denominator: str = "tokens"

    def __post_init__(self):
        if self.distinct2_denominator not in ("tokens", "bigrams"):
            raise UsageError(f"distinct2_denominator must be 'tokens' or 'bigrams', got '{self.distinct2_denominator}'")


SECTIONS = {
    "model": ModelConfig,
    "train": TrainConfig,
    "corpus": CorpusConfig,
    "pmi": PmiConfig,
    "eval": EvalConfig,
}

PRESETS: Dict[str, Dict[str, Dict[str, Any]]] = {
    "desk": {},
    "paper": {
        "model": {"d_emb": 100, "d_hidden": 512, "n_layers": 4},
        "train": {"vocab_cap": 20000},
    },
}


@dataclass
class CliConfig:
    """Fully resolved configuration of one CLI run."""

    command: str
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    corpus: CorpusConfig = field(default_factory=CorpusConfig)
    pmi: PmiConfig = field(default_factory=PmiConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    paths: Dict[str, Optional[str]] = field(default_factory=dict)

    @property
    def seed(self) -> int:
        return self.train.seed

    @property
    def variant(self) -> str:
        return self.model.variant

    def to_dict(self) -> Dict[str, Any]:
        out: Dict[str, Any] = {"command": self.command}
        for name in SECTIONS:
            out[name] = asdict(getattr(self, name))
        out["paths"] = dict(self.paths)
        return out


def load_toml(path: str) -> Dict[str, Dict[str, Any]]:
    """Read a TOML config file; only the known sections are allowed."""
    try:
        data = tomllib.loads(read_bytes(path).decode('utf-8'))
    except (tomllib.TOMLDecodeError, UnicodeDecodeError) as e:
        raise UsageError(f"invalid config file {path}: {e}") from e
    except DataIOError as e:
        raise UsageError(str(e)) from e
    for section, values in data.items():
        if section not in SECTIONS:
            raise UsageError(f"{path}: unknown config section [{section}]")
        if not isinstance(values, dict):
            raise UsageError(f"{path}: [{section}] must be a table")
    return data


def _parse_value(raw: str) -> Any:
    """TOML literal if it parses (numbers, booleans, quoted strings), bare string otherwise."""
    try:
        return tomllib.loads(f"v = {raw}")["v"]
    except tomllib.TOMLDecodeError:
        return raw


def parse_set_overrides(items: Optional[List[str]]) -> Dict[str, Dict[str, Any]]:
    """Turn ``section.key=value`` strings into a nested override layer."""
    layer: Dict[str, Dict[str, Any]] = {}
    for item in items or []:
        key, sep, raw = item.partition("=")
        section, dot, name = key.strip().partition(".")
        if not sep or not dot or not name:
            raise UsageError(f"--set expects section.key=value, got '{item}'")
        layer.setdefault(section, {})[name] = _parse_value(raw.strip())
    return layer


def _coerce(section: str, name: str, default: Any, value: Any) -> Any:
    where = f"{section}.{name}"
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise UsageError(f"{where} must be true or false, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise UsageError(f"{where} must be an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise UsageError(f"{where} must be a number, got {value!r}")
        return float(value)
    if value is not None and not isinstance(value, str):
        raise UsageError(f"{where} must be a string, got {value!r}")
    return value


def build_section(section: str, values: Mapping[str, Any]):
    """Instantiate one section dataclass from merged values, rejecting unknown keys."""
    cls = SECTIONS[section]
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(values) - set(known))
    if unknown:
        raise UsageError(f"unknown key(s) in [{section}]: {', '.join(unknown)}")
    kwargs = {}
    for name, value in values.items():
        default = known[name].default
        if default is MISSING:
            default = known[name].default_factory()
        kwargs[name] = _coerce(section, name, default, value)
    try:
        return cls(**kwargs)
    except TypedQError as e:
        raise UsageError(f"[{section}] {e}") from e


def merge_layers(*layers: Optional[Mapping[str, Mapping[str, Any]]]) -> Dict[str, Dict[str, Any]]:
    merged: Dict[str, Dict[str, Any]] = {}
    for layer in layers:
        for section, values in (layer or {}).items():
            if section not in SECTIONS:
                raise UsageError(f"unknown config section '{section}'")
            merged.setdefault(section, {}).update(values)
    return merged


def resolve_config(
    command: str,
    config_path: Optional[str] = None,
    preset: Optional[str] = None,
    set_overrides: Optional[List[str]] = None,
    flags: Optional[Mapping[str, Mapping[str, Any]]] = None,
    paths: Optional[Dict[str, Optional[str]]] = None
) -> CliConfig:
    """Merge every configuration layer into a CliConfig."""
    if preset is not None and preset not in PRESETS:
        raise UsageError(f"unknown preset '{preset}', expected one of {', '.join(PRESETS)}")
    file_layer = load_toml(config_path) if config_path else None
    flag_layer = {s: {k: v for k, v in values.items() if v is not None} for s, values in (flags or {}).items()}
    merged = merge_layers(PRESETS.get(preset or "desk"), file_layer, parse_set_overrides(set_overrides), flag_layer)
    sections = {name: build_section(name, merged.get(name, {})) for name in SECTIONS}
    return CliConfig(command=command, paths=dict(paths or {}), **sections)


def with_variant(config: CliConfig, variant: str) -> CliConfig:
    """Copy of config with another model variant."""
    return replace(config, model=build_section("model", {**asdict(config.model), "variant": variant}))


def stage_seed(root_seed: int, stage: str) -> int:
    """Independent, reproducible seed for one named stage derived from the root seed."""
    if root_seed < 0:
        raise UsageError(f"seed must be non-negative, got {root_seed}")
    sequence = np.random.SeedSequence(root_seed, spawn_key=tuple(stage.encode('utf-8')))
    return int(sequence.generate_state(1, dtype=np.uint32)[0])
