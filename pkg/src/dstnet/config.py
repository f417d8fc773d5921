"""Flat ``section.key = value`` config files.

Example::

    # comments start with '#'
    train.epochs = 300
    train.batch = 9
    loss.w3 = 0.1
    loss.enabled.hsv = false
    model.base_width = 32
    data.root = /data/LOL

Values are Python literals where they parse as one (numbers, booleans as
``true``/``false``, ``none``), strings otherwise. Later assignments win, so
command-line overrides are applied after the file.
"""
from __future__ import annotations

import ast
from dataclasses import dataclass, field, fields
from pathlib import Path

from .losses import TERMS, LossWeights
from .model import ModelConfig
from .train import TrainConfig


class ConfigError(ValueError):
    pass


_KEYWORDS = {"true": True, "false": False, "none": None, "null": None}


def parse_value(text: str):
    text = text.strip()
    if text.lower() in _KEYWORDS:
        return _KEYWORDS[text.lower()]
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        return text


def parse_lines(lines, source="<config>") -> dict:
    out = {}
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        out[key.strip()] = parse_value(value)
    return out


def read_config(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_lines(path.read_text().splitlines(), str(path))


def parse_overrides(items) -> dict:
    return parse_lines(items or [], "--override")


@dataclass
class RunSettings:
    train: TrainConfig = field(default_factory=TrainConfig)
    data_root: str | None = None
    manifest: str | None = None

    @property
    def loss(self) -> LossWeights:
        return self.train.loss

    @property
    def model(self) -> ModelConfig:
        return self.train.model


def resolve(values: dict) -> RunSettings:
    """Build settings from flat key/value pairs, validating every key."""
    train_kw, loss_kw, model_kw, enabled = {}, {}, {}, {}
    settings = RunSettings()
    for key, value in values.items():
        parts = key.split(".")
        section = parts[0]
        if section == "train" and len(parts) == 2:
            train_kw[parts[1]] = value
        elif section == "loss" and len(parts) == 3 and parts[1] == "enabled":
            if parts[2] not in TERMS:
                raise ConfigError(f"unknown loss term in {key!r}")
            enabled[parts[2]] = bool(value)
        elif section == "loss" and len(parts) == 2:
            loss_kw[parts[1]] = value
        elif section == "model" and len(parts) == 2:
            model_kw[parts[1]] = value
        elif key == "data.root":
            settings.data_root = None if value is None else str(value)
        elif key == "data.manifest":
            settings.manifest = None if value is None else str(value)
        elif key == "seed":
            train_kw["seed"] = model_kw["seed"] = value
        else:
            raise ConfigError(f"unknown config key {key!r}")
    try:
        loss = LossWeights(**loss_kw, enabled=enabled or {t: True for t in TERMS})
        model = ModelConfig(**model_kw)
        settings.train = TrainConfig(**train_kw, loss=loss, model=model)
    except TypeError as exc:
        raise ConfigError(f"unknown config key: {exc}") from exc
    return settings


def flatten(settings: RunSettings) -> dict:
    out = {}
    for f in fields(TrainConfig):
        if f.name not in ("loss", "model"):
            out[f"train.{f.name}"] = getattr(settings.train, f.name)
    for f in fields(LossWeights):
        if f.name == "enabled":
            for term, on in settings.loss.enabled.items():
                out[f"loss.enabled.{term}"] = on
        else:
            out[f"loss.{f.name}"] = getattr(settings.loss, f.name)
    for f in fields(ModelConfig):
        out[f"model.{f.name}"] = getattr(settings.model, f.name)
    out["data.root"] = settings.data_root
    out["data.manifest"] = settings.manifest
    return out


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if value is None:
        return "none"
    return repr(value) if not isinstance(value, str) else value


def dump(settings: RunSettings) -> str:
    return "".join(f"{k} = {_fmt(v)}\n" for k, v in flatten(settings).items())


def load_settings(config_path=None, overrides=None, seed=None) -> RunSettings:
    values = read_config(config_path) if config_path else {}
    values.update(parse_overrides(overrides))
    if seed is not None:
        values["seed"] = seed
    return resolve(values)
