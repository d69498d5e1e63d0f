"""Checkpoint files: named parameter arrays plus a JSON metadata record.

The file is a numpy ``.npz`` archive. Entry ``__meta__`` holds JSON with the
format version, the full run config and the shape of every parameter;
loading rejects any shape that disagrees with the configured architecture.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .layers import Module

FORMAT_VERSION = 1
META_KEY = "__meta__"


class CheckpointError(ValueError):
    pass


def save_checkpoint(path: str | Path, model: Module, config: dict, extra: dict | None = None) -> Path:
    path = Path(path)
    state = model.state_dict()
    meta = {
        "format_version": FORMAT_VERSION,
        "config": config,
        "shapes": {k: list(v.shape) for k, v in state.items()},
        "extra": extra or {},
    }
    arrays = {f"param/{k}": v for k, v in state.items()}
    arrays[META_KEY] = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)
    return path


def read_checkpoint(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    with np.load(Path(path), allow_pickle=False) as data:
        if META_KEY not in data.files:
            raise CheckpointError(f"{path}: missing metadata record")
        meta = json.loads(bytes(data[META_KEY]).decode())
        params = {k[len("param/"):]: data[k] for k in data.files if k.startswith("param/")}
    if meta.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {meta.get('format_version')}")
    return meta, params


def load_into(model: Module, params: dict[str, np.ndarray]) -> None:
    expected = {k: p.shape for k, p in model.named_parameters()}
    for k, shape in expected.items():
        if k not in params:
            raise CheckpointError(f"checkpoint lacks parameter {k!r}")
        if tuple(params[k].shape) != tuple(shape):
            raise CheckpointError(
                f"parameter {k!r}: checkpoint shape {tuple(params[k].shape)} does not match "
                f"configured architecture {tuple(shape)}")
    unexpected = sorted(set(params) - set(expected))
    if unexpected:
        raise CheckpointError(f"checkpoint has parameters unknown to this architecture: {unexpected}")
    model.load_state_dict(params)
