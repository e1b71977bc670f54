"""Flat ``key = value`` config files covering ModelConfig and TrainConfig fields.

Lists are comma separated. ``#`` starts a comment. Unknown keys are errors.
"""
from __future__ import annotations

from dataclasses import fields, replace

from .errors import ConfigError
from .model import ModelConfig
from .training import TrainConfig

_MODEL_KEYS = {f.name: f for f in fields(ModelConfig)}
_TRAIN_KEYS = {f.name: f for f in fields(TrainConfig)}
_OVERLAP = set(_MODEL_KEYS) & set(_TRAIN_KEYS)
assert not _OVERLAP, _OVERLAP


def _convert(value: str, default):
    try:
        if isinstance(default, tuple):
            return tuple(int(v) for v in value.split(",") if v.strip())
        if isinstance(default, bool):
            return value.lower() in ("1", "true", "yes")
        if isinstance(default, int):
            return int(value)
        if isinstance(default, float):
            return float(value)
    except ValueError as e:
        raise ConfigError(f"cannot parse {value!r}: {e}") from e
    return value


def parse_config(text: str, model: ModelConfig | None = None, train: TrainConfig | None = None
                 ) -> tuple[ModelConfig, TrainConfig]:
    model = model or ModelConfig()
    train = train or TrainConfig()
    mkw, tkw = {}, {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in _MODEL_KEYS:
            mkw[key] = _convert(value, getattr(model, key))
        elif key in _TRAIN_KEYS:
            tkw[key] = _convert(value, getattr(train, key))
        else:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
    if "glu_blocks" in mkw and "glu_dilations" not in mkw:
        mkw["glu_dilations"] = tuple(2**i for i in range(mkw["glu_blocks"]))
    try:
        return replace(model, **mkw), replace(train, **tkw)
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from e


def load_config(path) -> tuple[ModelConfig, TrainConfig]:
    try:
        with open(path, encoding="utf-8") as f:
            text = f.read()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    return parse_config(text)


def format_config(model: ModelConfig, train: TrainConfig | None = None) -> str:
    def fmt(v):
        return ",".join(str(x) for x in v) if isinstance(v, tuple) else str(v)

    lines = [f"{k} = {fmt(getattr(model, k))}" for k in _MODEL_KEYS]
    if train is not None:
        lines += [f"{k} = {fmt(getattr(train, k))}" for k in _TRAIN_KEYS]
    return "\n".join(lines) + "\n"
