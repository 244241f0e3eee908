"""Versioned JSON checkpoints: a name -> (shape, flat values) map plus metadata.

The writer is deterministic (sorted keys, repr-round-trip floats), so two runs
that produce identical parameters produce byte-identical files.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import ParseError, ShapeMismatchError
from .tensor import Tensor

FORMAT_NAME = "protoens-checkpoint"
FORMAT_VERSION = 1


def save_checkpoint(path, params: Mapping[str, Tensor], meta: dict | None = None) -> None:
    payload = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "meta": meta or {},
        "tensors": {
            name: {"shape": list(t.data.shape), "data": t.data.reshape(-1).tolist()}
            for name, t in params.items()
        },
    }
    Path(path).write_text(json.dumps(payload, sort_keys=True) + "\n", encoding="utf-8")


def load_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    """Returns (meta, name -> array). Raises ParseError on malformed files."""
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ParseError(f"checkpoint {path}: invalid JSON ({e})") from e
    if payload.get("format") != FORMAT_NAME:
        raise ParseError(f"checkpoint {path}: unknown format {payload.get('format')!r}")
    if payload.get("version") != FORMAT_VERSION:
        raise ParseError(f"checkpoint {path}: unsupported version {payload.get('version')!r}")
    tensors = {}
    for name, rec in payload["tensors"].items():
        shape = tuple(rec["shape"])
        arr = np.asarray(rec["data"], dtype=np.float64)
        if arr.size != int(np.prod(shape)):
            raise ParseError(f"checkpoint {path}: tensor {name} has {arr.size} values for shape {shape}")
        tensors[name] = arr.reshape(shape)
    return payload.get("meta", {}), tensors


def restore_params(params: Mapping[str, Tensor], arrays: Mapping[str, np.ndarray]) -> None:
    """Copy checkpoint arrays into live parameter tensors, checking shapes."""
    missing = set(params) - set(arrays)
    if missing:
        raise ParseError(f"checkpoint missing tensors: {sorted(missing)}")
    for name, t in params.items():
        arr = arrays[name]
        if arr.shape != t.data.shape:
            raise ShapeMismatchError(f"checkpoint tensor {name}: shape {arr.shape} != {t.data.shape}")
        t.data = arr.copy()
        t.grad = None
