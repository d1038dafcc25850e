"""Flat ``key = value`` run configuration with typed defaults.

The file has no section headers; ``#`` and ``;`` start comments.  Keys are
validated against :data:`DEFAULTS` so typos fail early.
"""

from __future__ import annotations

import configparser
from typing import Iterable

_SECTION = "mfagl"


class ConfigError(ValueError):
    pass


# key -> (type, default); a default of None means "unset"
SCHEMA: dict[str, tuple[type, object]] = {
    "lag_days": (int, 31),
    "hidden_size": (int, 32),
    "epochs": (int, 600),
    "batch_size": (int, 1),
    "lr": (float, 0.0001),
    "beta1": (float, 0.9),
    "beta2": (float, 0.999),
    "seed": (int, 0),
    "lag_order": (int, 11),
    "rf.n_trees": (int, 100),
    "rf.max_depth": (int, 8),
    "release_lag_days": (int, None),
    "world.n_large_areas": (int, 3),
    "world.children_per_large": (int, 4),
    "world.n_months": (int, 24),
    "world.start": (str, "2018-01"),
    "world.feature_noise": (float, 0.05),
}

DEFAULTS = {k: v for k, (_, v) in SCHEMA.items()}


def _coerce(key, raw):
    if key not in SCHEMA:
        raise ConfigError(f"unknown config key {key!r}")
    kind, _ = SCHEMA[key]
    raw = raw.strip()
    if raw == "":
        return None
    try:
        return kind(raw)
    except ValueError:
        raise ConfigError(f"config key {key!r} expects {kind.__name__}, got {raw!r}") from None


def parse_config(text: str) -> dict:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string(f"[{_SECTION}]\n{text}")
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    return {k: _coerce(k, v) for k, v in parser.items(_SECTION)}


def resolve_config(path=None, overrides: Iterable[str] = ()) -> dict:
    """Defaults, then the file at ``path``, then ``key=value`` overrides."""
    cfg = dict(DEFAULTS)
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            cfg.update(parse_config(fh.read()))
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override must look like key=value, got {item!r}")
        k, v = item.split("=", 1)
        cfg[k.strip()] = _coerce(k.strip(), v)
    validate_config(cfg)
    return cfg


def validate_config(cfg: dict) -> None:
    if cfg["batch_size"] != 1:
        raise ConfigError("only batch_size=1 is supported (one (p, t, tau) sample per step)")
    for key in ("lag_days", "hidden_size", "lag_order", "rf.n_trees"):
        if cfg[key] < 1:
            raise ConfigError(f"{key} must be >= 1, got {cfg[key]}")
    for key in ("epochs", "rf.max_depth"):
        if cfg[key] < 0:
            raise ConfigError(f"{key} must be >= 0, got {cfg[key]}")
    if not cfg["lr"] > 0:
        raise ConfigError(f"lr must be positive, got {cfg['lr']}")
    for key in ("beta1", "beta2"):
        if not 0 <= cfg[key] < 1:
            raise ConfigError(f"{key} must lie in [0, 1), got {cfg[key]}")


def format_config(cfg: dict) -> str:
    return "\n".join(f"{k} = {'' if v is None else v}" for k, v in sorted(cfg.items()))


def estimator_params(cfg: dict) -> dict:
    """Keyword arguments for :class:`~mfagl.aggl.MfAglRegressor`."""
    keys = ("lag_days", "hidden_size", "epochs", "lr", "beta1", "beta2", "seed")
    return {k: cfg[k] for k in keys}


def world_params(cfg: dict) -> dict:
    out = {k.split(".", 1)[1]: v for k, v in cfg.items() if k.startswith("world.")}
    out["seed"] = cfg["seed"]
    return out
