"""
Versioned JSON containers for model checkpoints.

Floats are written with Python's shortest round-trip repr, so a write/read
cycle reproduces every float64 bit-exactly.
"""

import json
import os
import tempfile
from pathlib import Path
from typing import Dict, Union

import numpy as np
from pydantic import ValidationError

from anchorstream.core.model import ModelState, _freeze
from anchorstream.core.tensor import Tensor
from anchorstream.exceptions import CheckpointError
from anchorstream.schemas.config import ModelConfig

CHECKPOINT_FORMAT = "anchorstream-checkpoint"
CHECKPOINT_VERSION = 1

PathLike = Union[str, Path]


def atomic_write_text(path: PathLike, text: str) -> None:
    """Write `text` to a temp file in the target directory, then rename over `path`."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _encode(tensors: Dict[str, Tensor]) -> Dict:
    return {
        name: {"shape": list(arr.shape), "data": [float(x) for x in np.asarray(arr).reshape(-1)]}
        for name, arr in tensors.items()
    }


def _decode(payload: Dict) -> Dict[str, Tensor]:
    return {
        name: np.asarray(entry["data"], dtype=np.float64).reshape(entry["shape"])
        for name, entry in payload.items()
    }


def save_model(model: ModelState, path: PathLike, include_base: bool = True) -> None:
    """Write config, base weights (optional) and adapters to a JSON checkpoint."""
    document = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": model.config.model_dump(mode="json"),
        "base": _encode(model.base) if include_base else None,
        "adapters": _encode(model.adapters),
    }
    atomic_write_text(path, json.dumps(document))


def _read(path: PathLike) -> Dict:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        document = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"checkpoint {path} is not valid JSON: {exc}") from exc
    if document.get("format") != CHECKPOINT_FORMAT or document.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"{path} is not an {CHECKPOINT_FORMAT} v{CHECKPOINT_VERSION} file"
        )
    return document


def load_model(path: PathLike) -> ModelState:
    """Read a full checkpoint written by `save_model`."""
    document = _read(path)
    if document.get("base") is None:
        raise CheckpointError(f"{path} holds adapters only; load it with load_adapters")
    try:
        config = ModelConfig.model_validate(document["config"])
    except ValidationError as exc:
        raise CheckpointError(f"{path} has an invalid model config: {exc}") from exc
    base = {name: _freeze(arr) for name, arr in _decode(document["base"]).items()}
    return ModelState(config=config, base=base, adapters=_decode(document["adapters"]))


def load_adapters(model: ModelState, path: PathLike) -> ModelState:
    """Attach the adapters stored at `path` to `model`'s base weights."""
    document = _read(path)
    try:
        config = ModelConfig.model_validate(document["config"])
    except ValidationError as exc:
        raise CheckpointError(f"{path} has an invalid model config: {exc}") from exc
    adapters = _decode(document["adapters"])
    if set(adapters) != {n for n in adapters if n.endswith(("lora_A", "lora_B"))}:
        raise CheckpointError(f"{path} holds non-adapter tensors under 'adapters'")
    return ModelState(config=config, base=model.base, adapters=adapters)
