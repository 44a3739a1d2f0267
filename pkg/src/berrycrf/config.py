"""Flat ``key = value`` configuration files for :class:`BerryPipeline`.

One setting per line; values are JSON literals (``null``, numbers, strings,
lists).  Blank lines and ``#`` comments are ignored.  Keys must be pipeline
parameters.
"""
from __future__ import annotations

import json
from pathlib import Path

from .pipeline import BerryPipeline


class ConfigError(ValueError):
    """Malformed or unknown configuration entry."""


def default_config():
    return BerryPipeline().get_params()


# pairs stored as tuples; JSON only has lists
TUPLE_KEYS = frozenset({"diameter_range_mm", "radius_range_px", "resize_to"})


def dumps(params):
    known = default_config()
    lines = []
    for key in sorted(params):
        if key not in known:
            raise ConfigError(f"unknown config key {key!r}")
        val = params[key]
        if isinstance(val, tuple):
            val = list(val)
        lines.append(f"{key} = {json.dumps(val)}")
    return "\n".join(lines) + "\n"


def loads(text):
    known = default_config()
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or not key:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        if key not in known:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        try:
            val = json.loads(value.strip())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {exc}") from None
        if key in TUPLE_KEYS and isinstance(val, list):
            val = tuple(val)
        out[key] = val
    return out


def load(path):
    return loads(Path(path).read_text())


def save(path, params):
    Path(path).write_text(dumps(params))
