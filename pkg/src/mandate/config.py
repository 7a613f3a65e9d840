"""Flat run configuration: defaults < config file < command-line overrides."""
from __future__ import annotations

from pathlib import Path

import numpy as np

DEFAULTS = {
    # root seed, split deterministically into data/split/init/batch streams
    "seed": 0,
    # synthetic data
    "nodes": 2000,
    "relations": 2,
    "fraud_rate": 0.1,
    "homophily": (0.9, 0.3),
    "mean_degree": (6.0, 6.0),
    "feature_dim": 16,
    "feature_signal": 1.5,
    # positional encoding
    "K": 2,
    "anchors": 512,
    "pe_strategy": "multiscale",
    "ppr_alpha": 0.15,
    # model
    "hidden": 64,
    "pos_dim": 64,
    "fused_dim": 64,
    "model_dim": 64,
    "heads": 4,
    "layers": 2,
    "lambda_orth": 0.1,
    "orth_mode": "cos2",
    # training
    "epochs": 200,
    "patience": 20,
    "lr": 0.005,
    "batch_size": 2048,
    "monitor": "auc",
    "split_ratios": (0.4, 0.2, 0.4),
}

STREAMS = ("data", "split", "init", "batch")


class ConfigError(ValueError):
    pass


def _coerce(key: str, raw):
    default = DEFAULTS[key]
    try:
        if isinstance(default, tuple):
            items = raw if isinstance(raw, (tuple, list)) else [t for t in str(raw).split(",") if t.strip()]
            return tuple(float(t) for t in items)
        if isinstance(default, bool):
            return str(raw).lower() in ("1", "true", "yes")
        if isinstance(default, int):
            value = float(raw)
            if value != int(value):
                raise ValueError
            return int(value)
        if isinstance(default, float):
            return float(raw)
    except (TypeError, ValueError):
        raise ConfigError(f"bad value for {key!r}: {raw!r}") from None
    return str(raw).strip()


def parse_config_text(text: str, source: str = "<config>") -> dict:
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in DEFAULTS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        out[key] = _coerce(key, value)
    return out


def resolve(file_path=None, overrides: dict | None = None) -> dict:
    """Defaults, then the config file, then explicit overrides."""
    cfg = dict(DEFAULTS)
    if file_path is not None:
        path = Path(file_path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        cfg.update(parse_config_text(path.read_text(), str(path)))
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key not in DEFAULTS:
            raise ConfigError(f"unknown key {key!r}")
        cfg[key] = _coerce(key, value)
    return cfg


def _fmt(value) -> str:
    if isinstance(value, tuple):
        return ",".join(repr(float(v)) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def dump(cfg: dict) -> str:
    return "".join(f"{k} = {_fmt(cfg[k])}\n" for k in sorted(cfg))


def seed_streams(root: int) -> dict:
    """Independent integer seeds for each randomness stream, derived from one root seed."""
    children = np.random.SeedSequence(root).spawn(len(STREAMS))
    return {name: int(child.generate_state(1, dtype=np.uint32)[0]) for name, child in zip(STREAMS, children)}
