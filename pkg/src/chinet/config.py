"""``key = value`` config files mirroring :class:`chinet.train.TrainConfig`."""
from __future__ import annotations

import dataclasses
from pathlib import Path

from .errors import ConfigError
from .train import TrainConfig, config_fields

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _convert(key: str, text: str, kind):
    kind = kind if isinstance(kind, str) else kind.__name__
    try:
        if kind == "bool":
            low = text.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(text)
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
        return text
    except ValueError:
        raise ConfigError(f"config key '{key}': cannot read {text!r} as {kind}") from None


def parse_overrides(pairs, base: dict | None = None, where="config") -> dict:
    """Turn ``(key, value-text, line)`` triples into typed values, rejecting unknown keys."""
    fields = config_fields()
    out = dict(base or {})
    for key, text, line in pairs:
        if key not in fields:
            at = f"{where}:{line}" if isinstance(line, int) else where
            raise ConfigError(f"{at}: unknown config key '{key}'")
        out[key] = _convert(key, text, fields[key].type)
    return out


def read_pairs(text: str, where="config"):
    pairs = []
    for n, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{where}:{n}: expected 'key = value', got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"{where}:{n}: missing key")
        pairs.append((key, value, n))
    return pairs


def build(values: dict) -> TrainConfig:
    try:
        return TrainConfig(**values)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path=None, overrides=()) -> TrainConfig:
    """Read ``path`` (or start from defaults) and apply ``key=value`` overrides."""
    values = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"no such config file: {path}")
        values = parse_overrides(read_pairs(path.read_text(), str(path)), where=str(path))
    extra = []
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, value = (s.strip() for s in item.split("=", 1))
        extra.append((key, value, None))
    values = parse_overrides(extra, values, where="--set")
    return build(values)


def dump_config(cfg: TrainConfig) -> str:
    lines = []
    for key, value in dataclasses.asdict(cfg).items():
        if isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"
