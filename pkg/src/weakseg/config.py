"""Flat run configuration with dotted keys, loaded from JSON and overridden by flags."""

import json
from dataclasses import fields

from .series import SynthConfig
from .training import TrainConfig


class ConfigError(ValueError):
    pass


MODEL_DEFAULTS = {"model.d_hidden": 32, "model.filter_size": 2, "model.n_layers": 4, "model.clamp_eps": 1e-7}
MISC_DEFAULTS = {
    "seed": 0,
    "split.ratio": "5:2:3",
    "grid.L": "4,8,12,16",
    "grid.tau": "0.1,0.3,0.5,0.7",
    "grid.beta": "0.1,0.5,1.0,2.0",
    "resume": False,
    "dump_dtw": "",
    "data": "",
    "out": "",
    "model": "",
    "pred": "",
}


def default_config() -> dict:
    cfg = dict(MISC_DEFAULTS)
    for f in fields(SynthConfig):
        default = f.default
        if isinstance(default, tuple):
            continue
        cfg[f"synth.{f.name}"] = default
    for f in fields(TrainConfig):
        if f.name != "seed":
            cfg[f"train.{f.name}"] = f.default
    cfg.update(MODEL_DEFAULTS)
    return cfg


def _coerce(key: str, value, default):
    if default is None:  # optional integers such as synth.n_anomalous
        if value in (None, "", "none", "None"):
            return None
        try:
            return int(value)
        except (TypeError, ValueError):
            raise ConfigError(f"{key}: expected an integer, got {value!r}") from None
    if isinstance(default, bool):
        if isinstance(value, bool):
            return value
        if str(value).lower() in ("1", "true", "yes", "on"):
            return True
        if str(value).lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {value!r}")
    try:
        if isinstance(default, int):
            if isinstance(value, float) and not value.is_integer():
                raise ValueError
            return int(value)
        if isinstance(default, float):
            return float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: expected a {type(default).__name__}, got {value!r}") from None
    if isinstance(value, list):
        return ",".join(str(v) for v in value) if not key == "split.ratio" else ":".join(str(v) for v in value)
    return str(value)


def load_config(path=None, overrides: dict | None = None) -> dict:
    cfg = default_config()
    sources = []
    if path:
        try:
            with open(path) as f:
                doc = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read config file {path}: {e}") from None
        if not isinstance(doc, dict):
            raise ConfigError(f"config file {path} must hold a flat JSON object")
        sources.append(doc)
    sources.append(overrides or {})
    for src in sources:
        for key, value in src.items():
            if key not in cfg:
                raise ConfigError(f"unknown config key {key!r}")
            cfg[key] = _coerce(key, value, default_config()[key])
    return cfg


def synth_config(cfg: dict) -> SynthConfig:
    sc = SynthConfig(**{k.split(".", 1)[1]: v for k, v in cfg.items() if k.startswith("synth.")})
    try:
        sc.validate()
    except ValueError as e:
        raise ConfigError(str(e)) from None
    return sc


def train_config(cfg: dict, **changes) -> TrainConfig:
    kw = {k.split(".", 1)[1]: v for k, v in cfg.items() if k.startswith("train.")}
    kw.update(changes)
    tc = TrainConfig(seed=cfg["seed"], **kw)
    try:
        tc.validate()
    except ValueError as e:
        raise ConfigError(str(e)) from None
    return tc


def model_kwargs(cfg: dict) -> dict:
    kw = {k.split(".", 1)[1]: v for k, v in cfg.items() if k.startswith("model.")}
    for name in ("d_hidden", "filter_size", "n_layers"):
        if kw[name] < 1:
            raise ConfigError(f"model.{name} must be a positive integer, got {kw[name]}")
    if not 0 < kw["clamp_eps"] < 0.5:
        raise ConfigError(f"model.clamp_eps must be in (0, 0.5), got {kw['clamp_eps']}")
    return kw


def split_ratio(cfg: dict) -> tuple:
    try:
        parts = tuple(float(p) for p in str(cfg["split.ratio"]).replace(",", ":").split(":"))
    except ValueError:
        raise ConfigError(f"split.ratio: expected three numbers like 5:2:3, got {cfg['split.ratio']!r}") from None
    if len(parts) != 3 or any(p < 0 for p in parts) or sum(parts) == 0:
        raise ConfigError(f"split.ratio: expected three nonnegative numbers, got {cfg['split.ratio']!r}")
    return parts


def grid_values(cfg: dict, key: str, cast) -> list:
    try:
        vals = [cast(v) for v in str(cfg[key]).split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"{key}: expected a comma-separated list, got {cfg[key]!r}") from None
    if not vals:
        raise ConfigError(f"{key}: empty list")
    return vals
