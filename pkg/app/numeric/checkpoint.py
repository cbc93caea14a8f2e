"""
Checkpoint files: one ``.npz`` per model.

Layout inside the archive:
    param/<name>, adam_m/<name>, adam_v/<name>  arrays at stored precision
    adam_step/<name>                            0-d int64
    __meta__                                    0-d unicode JSON (epoch, config, dims, ...)
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Dict, Tuple

import numpy as np

from app.errors import SchemaError
from app.numeric.params import ParamStore

_model_cache: Dict[str, Tuple[ParamStore, Dict[str, Any]]] = {}


def save_checkpoint(path: Path | str, store: ParamStore, metadata: Dict[str, Any]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays: Dict[str, np.ndarray] = {}
    for name in store.names():
        arrays[f"param/{name}"] = store.params[name]
        arrays[f"adam_m/{name}"] = store.m[name]
        arrays[f"adam_v/{name}"] = store.v[name]
        arrays[f"adam_step/{name}"] = np.asarray(store.steps[name], dtype=np.int64)
    arrays["__meta__"] = np.asarray(json.dumps(metadata, sort_keys=True))
    with path.open("wb") as fh:
        np.savez(fh, **arrays)
    _model_cache.pop(str(path.resolve()), None)
    return path


def load_checkpoint(path: Path | str) -> Tuple[ParamStore, Dict[str, Any]]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    store = ParamStore()
    with np.load(path, allow_pickle=False) as archive:
        if "__meta__" not in archive.files:
            raise SchemaError(f"{path}: not a checkpoint (no __meta__ entry)")
        metadata = json.loads(str(archive["__meta__"]))
        for key in archive.files:
            if not key.startswith("param/"):
                continue
            name = key[len("param/"):]
            store.set(name, archive[key])
            store.m[name] = archive[f"adam_m/{name}"].copy()
            store.v[name] = archive[f"adam_v/{name}"].copy()
            store.steps[name] = int(archive[f"adam_step/{name}"])
    return store, metadata


def get_or_load_checkpoint(path: Path | str) -> Tuple[ParamStore, Dict[str, Any]]:
    """Load a checkpoint through a small in-memory cache keyed by resolved path."""
    key = str(Path(path).resolve())
    if key not in _model_cache:
        _model_cache[key] = load_checkpoint(path)
    return _model_cache[key]
