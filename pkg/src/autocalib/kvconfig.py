"""Flat ``key = value`` config files mapped onto dataclass fields."""

from __future__ import annotations

import configparser
import dataclasses
from pathlib import Path

from .errors import ParseError

_SECTION = "config"


def _coerce(raw: str, default, name: str):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float) or default is None and _looks_float(raw):
            return float(raw)
        if isinstance(default, tuple):
            items = [s.strip() for s in raw.split(",") if s.strip()]
            if default and isinstance(default[0], (int, float)):
                typ = type(default[0])
                return tuple(typ(s) for s in items)
            return tuple(items)
    except ValueError:
        raise ParseError(f"{name}: cannot parse {raw!r}") from None
    return raw


def _looks_float(s: str) -> bool:
    try:
        float(s)
        return True
    except ValueError:
        return False


def parse_kv(text: str) -> dict[str, str]:
    """Parse flat ``key = value`` lines; ``#`` starts a comment."""
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",), interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(f"[{_SECTION}]\n" + text)
    except configparser.Error as e:
        raise ParseError(f"config: {e}") from None
    return dict(cp[_SECTION])


def from_kv(cls, text: str, **overrides):
    """Instantiate dataclass ``cls`` from key-value text; unknown keys are errors."""
    raw = parse_kv(text)
    fields = {f.name: f for f in dataclasses.fields(cls)}
    defaults = cls()
    kwargs = {}
    for key, val in raw.items():
        if key not in fields:
            raise ParseError(f"config: unknown key {key!r}")
        kwargs[key] = _coerce(val, getattr(defaults, key), key)
    kwargs.update({k: v for k, v in overrides.items() if v is not None})
    return cls(**kwargs)


def load_kv(cls, path, **overrides):
    return from_kv(cls, Path(path).read_text(), **overrides)


def to_kv(obj) -> str:
    lines = []
    for f in dataclasses.fields(obj):
        v = getattr(obj, f.name)
        if v is None or not isinstance(v, (bool, int, float, str, tuple)):
            continue
        if isinstance(v, tuple):
            v = ",".join(str(x) for x in v)
        lines.append(f"{f.name} = {v}")
    return "\n".join(lines) + "\n"
