"""
Paradigm presets and config resolution.

A preset is a nested dict of overrides on top of the config defaults; the
resolved ExperimentConfig is fully determined by preset + overrides.
"""

import copy
import json
import logging
from pathlib import Path
from typing import Any, Dict, Iterable, Mapping, Optional, Union

from pydantic import ValidationError

from anchorstream.exceptions import ConfigError
from anchorstream.schemas.config import ExperimentConfig

logger = logging.getLogger(__name__)

PRESETS: Dict[str, Dict[str, Any]] = {
    "V1.1": {
        "model": {"lora_rank": 16, "lora_alpha": 32.0},
        "train": {"mode": "naive"},
    },
    "V2.1": {
        "model": {"lora_rank": 24, "lora_alpha": 48.0},
        "train": {"mode": "er", "cap_target": 400, "cap_general": 0, "hard_fraction": 0.6},
    },
    "V3.1": {
        "model": {"lora_rank": 24, "lora_alpha": 48.0},
        "train": {"mode": "er", "cap_target": 300, "cap_general": 300, "hard_fraction": 0.6},
    },
    "V4.5": {
        "model": {"lora_rank": 24, "lora_alpha": 48.0},
        "train": {"mode": "ewc", "lambda": 10.0},
    },
    "V5.1": {
        "model": {"lora_rank": 24, "lora_alpha": 48.0},
        "train": {"mode": "hybrid", "lambda": 100.0, "cap_target": 300, "cap_general": 300, "hard_fraction": 0.6},
    },
}

_ALIASES = {"lambda_": "lambda"}


def _merge(base: Dict[str, Any], update: Mapping[str, Any]) -> Dict[str, Any]:
    out = copy.deepcopy(base)
    for key, value in update.items():
        key = _ALIASES.get(key, key)
        if isinstance(value, Mapping) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value) if isinstance(value, (dict, list)) else value
    return out


def parse_assignment(text: str) -> Dict[str, Any]:
    """
    Turn "train.lambda=100" into {"train": {"lambda": 100}}.

    Values are parsed as JSON when possible ("3", "1e-4", "true", "[\"q\"]"),
    otherwise kept as strings.
    """
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form key=value")
    dotted, raw = text.split("=", 1)
    try:
        value: Any = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    keys = [k for k in dotted.strip().split(".") if k]
    if not keys:
        raise ConfigError(f"override {text!r} has an empty key")
    nested: Dict[str, Any] = {keys[-1]: value}
    for key in reversed(keys[:-1]):
        nested = {key: nested}
    return nested


def load_config_file(path: Union[str, Path]) -> Dict[str, Any]:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(payload, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    return payload


def resolve_config(
    preset: str,
    overrides: Optional[Mapping[str, Any]] = None,
    assignments: Iterable[str] = (),
) -> ExperimentConfig:
    """
    Expand `preset`, apply nested `overrides` then dotted `assignments`, and validate.

    Raises:
        ConfigError: On an unknown preset (the message lists the valid ones),
            unknown keys or out-of-range values.
    """
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}; valid presets: {', '.join(PRESETS)}")
    document = _merge({"preset": preset}, PRESETS[preset])
    if overrides:
        document = _merge(document, overrides)
    for text in assignments:
        document = _merge(document, parse_assignment(text))
    document["preset"] = preset
    try:
        cfg = ExperimentConfig.model_validate(document)
    except ValidationError as exc:
        raise ConfigError(f"invalid configuration for {preset}: {exc}") from exc
    logger.debug("resolved %s: mode=%s r=%d alpha=%g lambda=%g", preset, cfg.train.mode,
                 cfg.model.lora_rank, cfg.model.lora_alpha, cfg.train.lambda_)
    return cfg
