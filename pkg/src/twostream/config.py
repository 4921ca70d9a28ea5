"""Run configuration: a flat ``key = value`` text format with ``[section]``
headers.

Unknown sections or keys are hard errors; a silently ignored typo in a
config is the classic way to lose reproducibility. Parsing and serializing
are mutually inverse: parse(serialize(parse(text))) == parse(text).
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path

from .backbone import BackboneConfig
from .data import SynthConfig
from .errors import ConfigError
from .flow import FlowParams
from .training import TrainingConfig

__all__ = ["ModelConfig", "RunConfig", "parse_config", "serialize_config", "load_config"]


@dataclass(frozen=True)
class ModelConfig:
    num_categories: int = 6
    time_step: int = 7
    lstm_hidden: int = 200
    representation: str = "lstm"
    seed: int = 0

    def __post_init__(self):
        if self.num_categories < 2:
            raise ConfigError(f"num_categories must be >= 2, got {self.num_categories}")
        if self.time_step < 1:
            raise ConfigError(f"time_step must be >= 1, got {self.time_step}")
        if self.representation not in ("lstm", "sum"):
            raise ConfigError(f"representation must be lstm or sum, got {self.representation!r}")


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    flow: FlowParams = field(default_factory=FlowParams)
    synth: SynthConfig = field(default_factory=SynthConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)


_SECTIONS = {
    "model": ModelConfig,
    "backbone": BackboneConfig,
    "flow": FlowParams,
    "synth": SynthConfig,
    "training": TrainingConfig,
}

# keys that hold comma-separated integer tuples
_TUPLE_KEYS = {"stage_channels", "convs_per_stage", "input_size"}


def _parse_value(section: str, key: str, raw: str):
    raw = raw.strip()
    if key in _TUPLE_KEYS:
        try:
            values = tuple(int(part.strip()) for part in raw.split(",") if part.strip())
        except ValueError as exc:
            raise ConfigError(f"[{section}] {key}: expected integers, got {raw!r}") from exc
        if key == "input_size" and len(values) == 1:
            return values[0]
        return values
    cls_fields = {f.name: f for f in fields(_SECTIONS[section])}
    target = cls_fields[key].type
    if target in ("int", int):
        try:
            return int(raw)
        except ValueError as exc:
            raise ConfigError(f"[{section}] {key}: expected an integer, got {raw!r}") from exc
    if target in ("float", float):
        try:
            return float(raw)
        except ValueError as exc:
            raise ConfigError(f"[{section}] {key}: expected a number, got {raw!r}") from exc
    return raw


def parse_config(text: str) -> RunConfig:
    """Parse config text into a :class:`RunConfig`, rejecting unknown keys."""
    collected: dict = {name: {} for name in _SECTIONS}
    section = None
    for line_no, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if stripped.startswith("[") and stripped.endswith("]"):
            section = stripped[1:-1].strip()
            if section not in _SECTIONS:
                raise ConfigError(f"line {line_no}: unknown section [{section}]")
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {line_no}: expected 'key = value', got {stripped!r}")
        if section is None:
            raise ConfigError(f"line {line_no}: key outside any [section]")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        known = {f.name for f in fields(_SECTIONS[section])}
        if key not in known:
            raise ConfigError(f"line {line_no}: unknown key {key!r} in [{section}]")
        if key in collected[section]:
            raise ConfigError(f"line {line_no}: duplicate key {key!r} in [{section}]")
        collected[section][key] = _parse_value(section, key, raw)

    kwargs = {}
    for name, cls in _SECTIONS.items():
        try:
            kwargs[name] = cls(**collected[name])
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"[{name}]: {exc}") from exc
    return RunConfig(**kwargs)


def _format_value(value) -> str:
    if isinstance(value, tuple):
        return ", ".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def serialize_config(config: RunConfig) -> str:
    """Canonical text form; every key is written so the file doubles as a
    reference of the available settings."""
    lines = []
    for name, cls in _SECTIONS.items():
        lines.append(f"[{name}]")
        component = getattr(config, name)
        for f in fields(cls):
            lines.append(f"{f.name} = {_format_value(getattr(component, f.name))}")
        lines.append("")
    return "\n".join(lines)


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    return parse_config(path.read_text())
