"""Run configuration: an INI-style config file whose values command-line flags override."""

from __future__ import annotations

import configparser
import os
from dataclasses import fields

from .data import DataError
from .pipeline import TrainingConfig

# flags valid for the [training] section, typed off the dataclass
_TRAINING_FIELDS = {f.name: f.type for f in fields(TrainingConfig)}

_BOUNDS = {
    "temperature": (0.0, None, "exclusive"),
    "magnitude_weight": (0.0, None, "inclusive"),
    "mask_fraction": (0.0, 1.0, "inclusive"),
    "drop_rate": (0.0, 1.0, "exclusive-high"),
    "uncon_rate": (0.0, 1.0, "inclusive"),
    "beta_min": (0.0, 1.0, "exclusive-high"),
    "beta_max": (0.0, 1.0, "exclusive-high"),
}


def _coerce(name: str, raw: str):
    kind = _TRAINING_FIELDS[name]
    if kind == "bool" or kind is bool:
        lowered = raw.strip().lower()
        if lowered in ("1", "true", "yes", "on"):
            return True
        if lowered in ("0", "false", "no", "off"):
            return False
        raise DataError(f"config key {name}: expected boolean, got {raw!r}")
    if kind == "int" or kind is int:
        return int(raw)
    if kind == "float" or kind is float:
        return float(raw)
    return raw


def load_config_file(path: str) -> dict:
    """Read [training] and [paths] sections into a flat override dict."""
    if not os.path.exists(path):
        raise DataError(f"config file {path} does not exist")
    parser = configparser.ConfigParser()
    parser.read(path)
    out: dict = {"training": {}, "paths": {}}
    if parser.has_section("training"):
        for key, raw in parser.items("training"):
            if key not in _TRAINING_FIELDS:
                raise DataError(f"unknown training config key {key!r}")
            out["training"][key] = _coerce(key, raw)
    if parser.has_section("paths"):
        out["paths"] = dict(parser.items("paths"))
    return out


def build_training_config(file_values: dict | None, flag_values: dict) -> TrainingConfig:
    """Defaults, overridden by the config file, overridden by explicit flags."""
    merged: dict = {}
    if file_values:
        merged.update(file_values.get("training", {}))
    merged.update({k: v for k, v in flag_values.items() if v is not None})
    config = TrainingConfig.from_dict(merged)
    validate_training_config(config)
    return config


def validate_training_config(config: TrainingConfig) -> None:
    for name, (lo, hi, mode) in _BOUNDS.items():
        value = getattr(config, name)
        if mode == "exclusive" and value <= lo:
            raise DataError(f"{name} must be > {lo}")
        if mode != "exclusive" and value < lo:
            raise DataError(f"{name} must be >= {lo}")
        if hi is not None:
            if mode == "exclusive-high" and value >= hi:
                raise DataError(f"{name} must be < {hi}")
            if mode == "inclusive" and value > hi:
                raise DataError(f"{name} must be <= {hi}")
    for name in ("ae_epochs", "aggregator_epochs", "decoder_epochs", "diffusion_epochs",
                 "finetune_epochs", "timesteps", "corrupted_views"):
        if getattr(config, name) < 1:
            raise DataError(f"{name} must be >= 1")
    if config.beta_min > config.beta_max:
        raise DataError("beta_min must not exceed beta_max")
