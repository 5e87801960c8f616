"""One JSON document drives generation, training and evaluation."""

from __future__ import annotations

import json
from dataclasses import asdict
from pathlib import Path

from .data import DataError
from .synthgen import ScenarioConfig
from .training import TrainConfig

MODEL_DEFAULTS = {
    "type": "aseer",
    "d_phi": 16,
    "d_hidden": 64,
    "step_size": 12,
    "hidden": 64,
    "no_agdn": False,
    "no_pte": False,
}

EVAL_DEFAULTS = {
    "step_sizes": [1, 6, 12, 24, 48],
    "horizon_hours": [1.0, 4.0, 24.0],
    "repeats": 3,
    "split": "test",
}

MODEL_TYPES = ("aseer", "recurrent")


def default_config() -> dict:
    return {
        "scenario": ScenarioConfig().to_dict(),
        "days": 7,
        "model": dict(MODEL_DEFAULTS),
        "training": asdict(TrainConfig()),
        "eval": dict(EVAL_DEFAULTS),
    }


def load_config(path: Path | str | None = None) -> dict:
    """Defaults overlaid with the user's document; unknown keys rejected."""
    cfg = default_config()
    if path is None:
        return cfg
    path = Path(path)
    if not path.exists():
        raise DataError(f"config file not found: {path}")
    try:
        with open(path) as fh:
            user = json.load(fh)
    except json.JSONDecodeError as exc:
        raise DataError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(user, dict):
        raise DataError("config root must be a JSON object")
    unknown = set(user) - set(cfg)
    if unknown:
        raise DataError(f"unknown config sections: {sorted(unknown)}")
    for section in ("scenario", "model", "training", "eval"):
        if section in user:
            if not isinstance(user[section], dict):
                raise DataError(f"config section {section!r} must be an object")
            cfg[section].update(user[section])
    if "days" in user:
        cfg["days"] = user["days"]
    validate_config(cfg)
    return cfg


def validate_config(cfg: dict) -> None:
    ScenarioConfig.from_dict(cfg["scenario"]).validate()
    TrainConfig.from_dict(cfg["training"])
    if not (isinstance(cfg["days"], int) and cfg["days"] >= 1):
        raise DataError(f"days must be an integer >= 1, got {cfg['days']!r}")
    model = cfg["model"]
    unknown = set(model) - set(MODEL_DEFAULTS)
    if unknown:
        raise DataError(f"unknown model config keys: {sorted(unknown)}")
    if model["type"] not in MODEL_TYPES:
        raise DataError(f"model type must be one of {MODEL_TYPES}, got {model['type']!r}")
    if model["step_size"] < 1:
        raise DataError(f"step_size must be >= 1, got {model['step_size']}")
    if model["d_phi"] % 2 != 0 or model["d_phi"] < 2:
        raise DataError(f"d_phi must be a positive even integer, got {model['d_phi']}")
    ev = cfg["eval"]
    unknown = set(ev) - set(EVAL_DEFAULTS)
    if unknown:
        raise DataError(f"unknown eval config keys: {sorted(unknown)}")


def save_config(cfg: dict, path: Path | str) -> None:
    with open(path, "w") as fh:
        json.dump(cfg, fh, indent=2)
        fh.write("\n")
