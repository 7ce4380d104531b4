"""Experiment configuration: a flat, typed key-value format (INI sections per
module) with schema validation, range checks and rejection of unknown keys.
"""

from __future__ import annotations

import configparser
import hashlib
import io
import math
from dataclasses import dataclass, field
from typing import Any


class ConfigError(ValueError):
    """Validation failure; the message carries the offending field path."""


@dataclass(frozen=True)
class Field:
    section: str
    name: str
    type: type
    default: Any
    lo: float | None = None
    hi: float | None = None
    help: str = ""

    @property
    def path(self) -> str:
        return f"{self.section}.{self.name}"

    def parse(self, raw: str):
        try:
            if self.type is bool:
                val = raw.strip().lower() in ("1", "true", "yes", "on")
            else:
                val = self.type(raw)
        except ValueError as exc:
            raise ConfigError(f"{self.path}: cannot parse {raw!r} as {self.type.__name__}") from exc
        self.check(val)
        return val

    def check(self, val):
        if self.type in (int, float):
            if self.lo is not None and val < self.lo:
                raise ConfigError(f"{self.path}: {val} below minimum {self.lo}")
            if self.hi is not None and val > self.hi:
                raise ConfigError(f"{self.path}: {val} above maximum {self.hi}")


@dataclass
class Schema:
    """Typed key set for one experiment; every numeric field is range-checked
    against the owning module's preconditions."""

    fields: list[Field] = field(default_factory=list)

    def add(self, section: str, name: str, type_, default, lo=None, hi=None, help=""):
        self.fields.append(Field(section, name, type_, default, lo, hi, help))
        return self

    def by_path(self) -> dict[str, Field]:
        return {f.path: f for f in self.fields}

    def defaults(self) -> dict[str, Any]:
        return {f.path: f.default for f in self.fields}


BASE_FIELDS = [
    Field("experiment", "name", str, ""),
    Field("experiment", "seed", int, 20260811, lo=0),
    Field("experiment", "replicates", int, 0, lo=0, help="0 keeps the experiment default"),
    Field("experiment", "threads", int, 1, lo=1, hi=256),
    Field("experiment", "out", str, ""),
]


def parse_config(text: str, schema: Schema) -> dict[str, Any]:
    """Parse INI text against the schema: unknown keys are rejected with their
    field path, values are type- and range-checked, and missing keys fall back
    to defaults."""
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    known = {f.path: f for f in BASE_FIELDS}
    known.update(schema.by_path())
    out = {f.path: f.default for f in BASE_FIELDS}
    out.update(schema.defaults())
    for section in cp.sections():
        for key, raw in cp.items(section):
            path = f"{section}.{key}"
            if path not in known:
                raise ConfigError(f"unknown key {path}")
            out[path] = known[path].parse(raw)
    return out


def config_hash(cfg: dict[str, Any]) -> str:
    """Stable digest of the fully-resolved configuration."""
    canon = "\n".join(f"{k}={cfg[k]!r}" for k in sorted(cfg))
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


def render_config(cfg: dict[str, Any]) -> str:
    sections: dict[str, list[tuple[str, Any]]] = {}
    for path, val in cfg.items():
        sec, name = path.split(".", 1)
        sections.setdefault(sec, []).append((name, val))
    buf = io.StringIO()
    for sec in sorted(sections):
        buf.write(f"[{sec}]\n")
        for name, val in sorted(sections[sec]):
            buf.write(f"{name} = {val}\n")
        buf.write("\n")
    return buf.getvalue()
