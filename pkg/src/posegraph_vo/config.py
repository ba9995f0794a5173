"""Flat ``key = value`` run configuration.

Every key names a field of :class:`SimConfig`, :class:`LMConfig` or
:class:`LoopConfig`.  Tuples are written comma-separated; waypoints as
``x:z`` pairs, e.g. ``waypoints = 0:0, 0:100, 50:100``.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .loops import LoopConfig
from .optimizer import LMConfig
from .sim import ConfigError, SimConfig

SECTIONS = {"sim": SimConfig, "lm": LMConfig, "loops": LoopConfig}


@dataclass(frozen=True)
class RunConfig:
    sim: SimConfig = field(default_factory=SimConfig)
    lm: LMConfig = field(default_factory=LMConfig)
    loops: LoopConfig = field(default_factory=LoopConfig)

    def to_dict(self) -> dict:
        return {name: dataclasses.asdict(getattr(self, name)) for name in SECTIONS}


def _owner(key: str) -> tuple[str, dataclasses.Field]:
    for name, cls in SECTIONS.items():
        for f in dataclasses.fields(cls):
            if f.name == key:
                return name, f
    raise ConfigError(f"unknown config key {key!r}")


def _convert(key: str, default, text: str):
    text = text.strip()
    try:
        if isinstance(default, bool):
            if text.lower() in ("1", "true", "yes", "on"):
                return True
            if text.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {text!r}")
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, str):
            return text
        if key == "waypoints":
            return tuple(
                tuple(float(c) for c in item.split(":")) for item in text.split(",") if item.strip()
            )
        if isinstance(default, tuple):
            return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError as exc:
        raise ConfigError(f"{key}: {exc}") from exc
    raise ConfigError(f"{key}: unsupported value type")


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    values: dict[str, dict] = {name: {} for name in SECTIONS}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key = value")
        key, val = (s.strip() for s in line.split("=", 1))
        try:
            section, f = _owner(key)
            default = f.default if f.default is not dataclasses.MISSING else f.default_factory()
            values[section][key] = _convert(key, default, val)
        except ConfigError as exc:
            raise ConfigError(f"{source}:{lineno}: {exc}") from exc
    try:
        return RunConfig(**{name: cls(**values[name]) for name, cls in SECTIONS.items()})
    except ValueError as exc:
        raise ConfigError(f"{source}: {exc}") from exc


def load_config(path: str | Path) -> RunConfig:
    return parse_config(Path(path).read_text(), str(path))


def format_config(cfg: RunConfig) -> str:
    lines = []
    for name in SECTIONS:
        section = getattr(cfg, name)
        for f in dataclasses.fields(section):
            v = getattr(section, f.name)
            if f.name == "waypoints":
                text = ", ".join(":".join(repr(float(c)) for c in p) for p in v)
            elif isinstance(v, tuple):
                text = ", ".join(repr(float(c)) for c in v)
            else:
                text = repr(v) if isinstance(v, float) else str(v)
            lines.append(f"{f.name} = {text}")
    return "\n".join(lines) + "\n"
