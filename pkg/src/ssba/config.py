"""Flat ``key = value`` run configuration with unit-annotated keys.

Example file::

    # scene
    n_ue = 20000
    street_half_length_m = 250
    # link budget
    tx_power_dbm = 40

Every key has a default, so an empty file yields the reference setting.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

from .beams import LinkBudget
from .errors import ConfigError
from .models.training import TrainConfig
from .scene import SceneConfig


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _int(text: str) -> int:
    # accept "20000" and "2e4" but not "2.5"
    try:
        return int(text)
    except ValueError:
        v = float(text)
        if not v.is_integer():
            raise
        return int(v)


# key -> (section, type, default)
SCHEMA: dict[str, tuple[str, type | object, object]] = {
    # scene
    "street_half_length_m": ("scene", float, 250.0),
    "street_width_m": ("scene", float, 20.0),
    "bs_height_m": ("scene", float, 10.0),
    "ue_height_m": ("scene", float, 1.5),
    "n_ue": ("scene", _int, 20_000),
    "los_decay_length_m": ("scene", float, 236.0),
    "reflection_loss_db": ("scene", float, 6.0),
    "max_reflection_order": ("scene", _int, 2),
    "nlos_extra_loss_db": ("scene", float, 6.0),
    "carrier_hz": ("scene", float, 28e9),
    "boresight_rad": ("scene", float, math.pi / 4),
    "ue_min_distance_m": ("scene", float, 60.0),
    "n_ant": ("scene", _int, 64),
    # link budget
    "tx_power_dbm": ("budget", float, 40.0),
    "noise_psd_dbm_hz": ("budget", float, -161.0),
    "bandwidth_hz": ("budget", float, 5e7),
    "spreading_gain": ("budget", float, 32.0),
    # training
    "epochs": ("training", _int, 200),
    "batch_size": ("training", _int, 512),
    "lr": ("training", float, 1e-3),
    "seed": ("training", _int, 0),
    "train_fraction": ("training", float, 0.8),
    "train_noise": ("training", _bool, True),
    # sweep / evaluation
    "codebook_size": ("sweep", _int, 256),
    "refine_k": ("sweep", _int, 4),
    "eval_seed": ("sweep", _int, 1234),
    "noise": ("sweep", _bool, True),
}

DEFAULTS = {k: v[2] for k, v in SCHEMA.items()}

_SCENE_KEYS = {
    "street_half_length_m": "street_half_length", "street_width_m": "street_width",
    "bs_height_m": "bs_height", "ue_height_m": "ue_height", "n_ue": "n_ue",
    "los_decay_length_m": "los_decay_length", "reflection_loss_db": "reflection_loss_db",
    "max_reflection_order": "max_reflection_order", "nlos_extra_loss_db": "nlos_extra_loss_db",
    "carrier_hz": "carrier_hz", "boresight_rad": "boresight_rad",
    "ue_min_distance_m": "ue_min_distance", "n_ant": "n_ant",
}


@dataclass
class RunConfig:
    """Merged configuration: defaults, then file values, then overrides."""
    values: dict

    def __getitem__(self, key):
        return self.values[key]

    def section(self, name: str) -> dict:
        return {k: v for k, v in self.values.items() if SCHEMA[k][0] == name}

    def scene(self) -> SceneConfig:
        return SceneConfig(**{_SCENE_KEYS[k]: v for k, v in self.section("scene").items()})

    def budget(self) -> LinkBudget:
        return LinkBudget(**self.section("budget"))

    def training(self) -> TrainConfig:
        return TrainConfig(**self.section("training"))


def _coerce(key: str, raw, where: str):
    if key not in SCHEMA:
        raise ConfigError(f"unknown config key {key!r}{where}")
    conv = SCHEMA[key][1]
    if not isinstance(raw, str):
        raw = str(raw)
    try:
        return conv(raw.strip())
    except ValueError:
        raise ConfigError(f"bad value {raw.strip()!r} for key {key!r}{where}") from None


def parse_text(text: str, source: str = "<config>") -> dict:
    """Parse config text into a typed dict of the keys it sets."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        where = f" ({source}, line {lineno})"
        if "=" not in line:
            raise ConfigError(f"expected 'key = value'{where}")
        key, raw = (s.strip() for s in line.split("=", 1))
        if not raw:
            raise ConfigError(f"missing value for key {key!r}{where}")
        if key in out:
            raise ConfigError(f"duplicate key {key!r}{where}")
        out[key] = _coerce(key, raw, where)
    return out


def parse_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Defaults, updated by the file at ``path`` (if any), then by ``overrides``.

    Raises:
        ConfigError: unknown key, malformed line or untypeable value; the
            message names the key and, for file input, the line.
    """
    values = dict(DEFAULTS)
    if path is not None:
        p = Path(path)
        values.update(parse_text(p.read_text(encoding="utf-8"), str(p)))
    for key, raw in (overrides or {}).items():
        if raw is None:
            continue
        values[key] = _coerce(key, raw, " (command-line override)")
    missing = [k for k in SCHEMA if k not in values]
    if missing:
        raise ConfigError(f"missing required keys: {', '.join(missing)}")
    return RunConfig(values)
