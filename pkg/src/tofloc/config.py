"""Flat ``dotted.key = value`` config files layered onto nested dataclasses.

Keys address dataclass fields by path, e.g. ``pf.n_particles = 500`` or
``noise.sigma_fraction = 0.05``. Appending ``_deg`` to an angle field sets
it in degrees: ``pf.jitter_ang_deg = 2``. Values are Python literals; bare
words are kept as strings.
"""

from __future__ import annotations

import ast
import dataclasses
import math
from pathlib import Path


def parse_value(text: str):
    text = text.strip()
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        return text


def read_config(path) -> dict:
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        out[key.strip()] = parse_value(value)
    return out


def _coerce(current, value):
    if isinstance(current, bool):
        if not isinstance(value, bool):
            raise ValueError(f"expected a boolean, got {value!r}")
        return value
    if isinstance(current, float) and isinstance(value, int):
        return float(value)
    if isinstance(current, frozenset):
        return frozenset(value)
    if isinstance(current, tuple) and isinstance(value, (list, tuple)):
        return tuple(value)
    return value


def set_path(obj, key: str, value):
    """Return a copy of the dataclass ``obj`` with the dotted field ``key`` replaced."""
    head, _, rest = key.partition(".")
    if rest:
        if not hasattr(obj, head) or not dataclasses.is_dataclass(getattr(obj, head)):
            raise KeyError(f"unknown config section {head!r}")
        return dataclasses.replace(obj, **{head: set_path(getattr(obj, head), rest, value)})
    names = {f.name for f in dataclasses.fields(obj)}
    if head not in names and head.endswith("_deg") and head[:-4] in names:
        head, value = head[:-4], math.radians(float(value))
    if head not in names:
        raise KeyError(f"unknown config key {key!r} on {type(obj).__name__}")
    return dataclasses.replace(obj, **{head: _coerce(getattr(obj, head), value)})


def apply_overrides(obj, overrides: dict):
    for key, value in overrides.items():
        obj = set_path(obj, key, value)
    return obj


def flatten(obj, prefix: str = "") -> dict:
    """Dotted view of a dataclass tree; fields that are not plain values are skipped."""
    out = {}
    for f in dataclasses.fields(obj):
        v = getattr(obj, f.name)
        key = prefix + f.name
        if dataclasses.is_dataclass(v):
            out.update(flatten(v, key + "."))
        elif isinstance(v, frozenset):
            out[key] = sorted(v)
        elif v is None or isinstance(v, (bool, int, float, str)) or (
                isinstance(v, tuple) and all(isinstance(x, (int, float, str)) for x in v)):
            out[key] = v
    return out


def format_config(obj, header: str = "") -> str:
    lines = [f"# {line}" for line in header.splitlines()]
    lines += [f"{k} = {v!r}" for k, v in flatten(obj).items()]
    return "\n".join(lines) + "\n"
