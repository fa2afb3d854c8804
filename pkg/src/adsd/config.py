"""Text config files: UTF-8, one ``key = value`` per line.

Keys are dotted paths into :class:`~adsd.train.TrainConfig`; ``model.``
reaches the :class:`~adsd.model.ModelConfig`, ``model.backbone.`` and
``model.aspp.`` its nested configs. A ``[section]`` line prefixes the keys
that follow it. ``#`` starts a comment. Lists are comma separated, booleans
are ``true``/``false``, optional values accept ``none``. Unknown keys are
errors.

Example::

    seed = 3
    epochs_pretrain = 60
    [model]
    fusion = channel_attention
    aspp.rates = 2, 4, 6
"""

from __future__ import annotations

import dataclasses
import enum
import typing
from pathlib import Path
from typing import Any

from .errors import ConfigError


def _parse_scalar(tp, text: str, key: str):
    text = text.strip()
    if tp is bool:
        low = text.lower()
        if low in ("true", "yes", "1", "on"):
            return True
        if low in ("false", "no", "0", "off"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {text!r}")
    try:
        if isinstance(tp, type) and issubclass(tp, enum.Enum):
            return tp(text.lower())
        if tp is int:
            return int(text)
        if tp is float:
            return float(text)
        if tp is str:
            return text
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {text!r} as {getattr(tp, '__name__', tp)}") from None
    raise ConfigError(f"{key}: unsupported field type {tp}")


def _parse_value(tp, text: str, key: str):
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin is typing.Union:
        inner = [a for a in args if a is not type(None)]
        if text.strip().lower() in ("none", "null", ""):
            return None
        return _parse_value(inner[0], text, key)
    if tp is tuple or origin is tuple:
        elem = args[0] if args else int
        items = [s for s in text.split(",") if s.strip()]
        return tuple(_parse_scalar(elem, s, key) for s in items)
    return _parse_scalar(tp, text, key)


def _format_value(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, enum.Enum):
        return str(value.value)
    if isinstance(value, tuple):
        return ", ".join(_format_value(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _hints(cls) -> dict:
    return typing.get_type_hints(cls)


def parse_lines(lines) -> dict[str, str]:
    pairs: dict[str, str] = {}
    section = ""
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        key = key.strip()
        full = f"{section}.{key}" if section else key
        if full in pairs:
            raise ConfigError(f"line {lineno}: duplicate key {full!r}")
        pairs[full] = value.strip()
    return pairs


def build(cls, pairs: dict[str, str], prefix: str = ""):
    """Instantiate dataclass ``cls`` from flattened dotted ``pairs``."""
    hints = _hints(cls)
    kwargs: dict[str, Any] = {}
    consumed = set()
    for f in dataclasses.fields(cls):
        key = prefix + f.name
        tp = hints[f.name]
        if dataclasses.is_dataclass(tp):
            sub = {k: v for k, v in pairs.items() if k.startswith(key + ".")}
            if sub:
                kwargs[f.name] = build(tp, sub, key + ".")
                consumed.update(sub)
            continue
        if key in pairs:
            kwargs[f.name] = _parse_value(tp, pairs[key], key)
            consumed.add(key)
    unknown = sorted(set(pairs) - consumed)
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def flatten(obj, prefix: str = "") -> list[tuple[str, str]]:
    out = []
    for f in dataclasses.fields(obj):
        value = getattr(obj, f.name)
        key = prefix + f.name
        if dataclasses.is_dataclass(value):
            out.extend(flatten(value, key + "."))
        else:
            out.append((key, _format_value(value)))
    return out


def dumps(obj) -> str:
    return "".join(f"{k} = {v}\n" for k, v in flatten(obj))


def loads(cls, text: str):
    return build(cls, parse_lines(text.splitlines()))


def load_file(cls, path):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return loads(cls, text)
