"""Flat ``key = value`` config files.

Blank lines and ``#`` comments are ignored. Values are typed against a schema
of defaults: each default's type decides how the string is parsed, and a
tuple default means a comma-separated list of its element type.
"""
from __future__ import annotations

from pathlib import Path

from .errors import ConfigError


def parse_config_text(text: str) -> dict[str, str]:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected key=value, got {line!r}")
        key, value = (p.strip() for p in line.split("=", 1))
        if not key:
            raise ConfigError(f"config line {lineno}: empty key")
        out[key] = value
    return out


def convert_value(key, value: str, default):
    try:
        if isinstance(default, bool):
            low = value.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        if isinstance(default, tuple):
            elem = type(default[0]) if default else str
            return tuple(convert_value(key, v.strip(), elem()) for v in value.split(",") if v.strip())
        if isinstance(default, int):
            return int(value)
        if isinstance(default, float):
            return float(value)
        return value
    except ValueError:
        raise ConfigError(f"bad value {value!r} for {key}") from None


def resolve(schema: dict, path=None, overrides: dict | None = None) -> dict:
    """Defaults from ``schema``, then the config file, then ``overrides``."""
    values = dict(schema)
    raw = {}
    if path is not None:
        try:
            raw.update(parse_config_text(Path(path).read_text()))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
    for key, value in raw.items():
        if key not in schema:
            raise ConfigError(f"unknown config key {key!r}")
        values[key] = convert_value(key, value, schema[key])
    for key, value in (overrides or {}).items():
        if value is not None:
            values[key] = value
    for key, value in values.items():
        if isinstance(value, tuple) and not value and schema[key]:
            raise ConfigError(f"{key} must not be empty")
    return values
