"""Flat key-value config files with sections, and coercion onto the
dataclass configs. CLI flags and --set overrides win over file values.

Example:

    [world]
    n_users = 200
    n_items = 2000

    [train]
    learning_rate = 0.003
    batch_size = 24
"""

from __future__ import annotations

import configparser
import dataclasses
import json

from .cascade import CascadeConfig, TeacherConfig, WorldConfig
from .features import ConfigurationError
from .losses import HybridWeights
from .model import ModelConfig
from .trainer import TrainConfig

SECTION_TYPES = {
    "world": WorldConfig,
    "model": ModelConfig,
    "sampling": CascadeConfig,
    "loss": HybridWeights,
    "train": TrainConfig,
    "teacher": TeacherConfig,
}


def parse_config_text(text: str) -> dict[str, dict[str, str]]:
    parser = configparser.ConfigParser()
    try:
        parser.read_string(text)
    except configparser.Error as e:
        raise ConfigurationError(f"malformed config: {e}") from e
    out = {section: dict(parser[section]) for section in parser.sections()}
    for section in out:
        if section not in SECTION_TYPES:
            raise ConfigurationError(f"unknown config section [{section}]")
    return out


def load_config(path) -> dict[str, dict[str, str]]:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config_text(fh.read())


def apply_overrides(config: dict[str, dict[str, str]], overrides: list[str]) -> dict[str, dict[str, str]]:
    """Apply `section.key=value` strings on top of file values."""
    out = {k: dict(v) for k, v in config.items()}
    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigurationError(f"override must look like section.key=value, got {item!r}")
        target, value = item.split("=", 1)
        section, key = target.split(".", 1)
        if section not in SECTION_TYPES:
            raise ConfigurationError(f"unknown config section [{section}]")
        out.setdefault(section, {})[key.strip()] = value.strip()
    return out


def _coerce(value: str, target_type) -> object:
    if target_type is int:
        return int(value)
    if target_type is float:
        return float(value)
    if target_type is bool:
        low = value.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {value!r}")
    if target_type is str:
        return value
    raise ValueError(f"unsupported type {target_type}")


def build_section(section: str, values: dict[str, str]):
    """Instantiate the dataclass for a section from string values."""
    cls = SECTION_TYPES[section]
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, raw in values.items():
        if key not in fields:
            raise ConfigurationError(f"unknown key {key!r} in section [{section}]")
        ftype = fields[key].type
        try:
            if ftype in ("int", int):
                kwargs[key] = _coerce(raw, int)
            elif ftype in ("float", float):
                kwargs[key] = _coerce(raw, float)
            elif ftype in ("bool", bool):
                kwargs[key] = _coerce(raw, bool)
            elif ftype in ("str", str):
                kwargs[key] = raw
            elif "tuple" in str(ftype):
                kwargs[key] = tuple(int(tok) for tok in raw.replace(",", " ").split())
            elif "dict" in str(ftype):
                kwargs[key] = json.loads(raw)
            else:
                raise ValueError(f"unsupported field type {ftype}")
        except (ValueError, json.JSONDecodeError) as e:
            raise ConfigurationError(f"bad value for {section}.{key}: {e}") from e
    try:
        return cls(**kwargs)
    except TypeError as e:
        raise ConfigurationError(f"bad section [{section}]: {e}") from e


def resolve_configs(config: dict[str, dict[str, str]]) -> dict[str, object]:
    """Dataclass instances for every section, defaults where absent."""
    return {name: build_section(name, config.get(name, {})) for name in SECTION_TYPES}


def config_echo(resolved: dict[str, object], extra: dict | None = None) -> dict:
    echo = {}
    for name, obj in resolved.items():
        d = dict(obj.__dict__)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        echo[name] = d
    if extra:
        echo["run"] = extra
    return echo
