"""
Feature tables: per-instance appearance vectors plus one whole-image vector.

feats/<id>.bin   little-endian float32: count x dim instance rows (in
                 header id order) followed by global_dim global values
feats/<id>.json  {"version": "v1", "count", "dim", "global_dim", "ids"}
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Dict

import numpy as np

from app.errors import SchemaError
from app.models import FORMAT_VERSION
from app.numeric.tensor import as_tensor

_DTYPE = np.dtype("<f4")


@dataclass
class FeatureTable:
    object_features: Dict[int, np.ndarray]
    global_feature: np.ndarray

    @property
    def dim(self) -> int:
        return int(next(iter(self.object_features.values())).shape[0]) if self.object_features else 0

    @property
    def global_dim(self) -> int:
        return int(self.global_feature.shape[0])


def header_path(bin_path: Path) -> Path:
    return bin_path.with_suffix(".json")


def save_features(path: Path | str, table: FeatureTable) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    ids = sorted(table.object_features)
    dims = {table.object_features[i].shape[0] for i in ids}
    if len(dims) > 1:
        raise SchemaError(f"feature vectors of one table must share a dimension, got {sorted(dims)}")
    rows = [np.asarray(table.object_features[i], dtype=_DTYPE) for i in ids]
    flat = np.concatenate(rows + [np.asarray(table.global_feature, dtype=_DTYPE)])
    path.write_bytes(flat.astype(_DTYPE).tobytes())
    header = {
        "version": FORMAT_VERSION,
        "count": len(ids),
        "dim": table.dim,
        "global_dim": table.global_dim,
        "ids": ids,
    }
    header_path(path).write_text(json.dumps(header, sort_keys=True) + "\n")
    return path


def load_features(path: Path | str) -> FeatureTable:
    path = Path(path)
    head = header_path(path)
    if not path.exists() or not head.exists():
        raise SchemaError(f"feature table incomplete: need both {path} and {head}")
    header = json.loads(head.read_text())
    missing = {"version", "count", "dim", "global_dim", "ids"} - set(header)
    if missing:
        raise SchemaError(f"{head}: missing fields {sorted(missing)}")
    if header["version"] != FORMAT_VERSION:
        raise SchemaError(f"{head}: unsupported version {header['version']!r}")
    count, dim, gdim, ids = header["count"], header["dim"], header["global_dim"], header["ids"]
    if len(ids) != count or len(set(ids)) != count:
        raise SchemaError(f"{head}: 'ids' must list {count} distinct instance ids")
    values = np.frombuffer(path.read_bytes(), dtype=_DTYPE)
    if values.size != count * dim + gdim:
        raise SchemaError(f"{path}: {values.size} floats, header promises {count} x {dim} + {gdim}")
    rows = as_tensor(values[:count * dim], (count, dim), name=str(path)) if count else np.zeros((0, dim))
    global_feature = as_tensor(values[count * dim:], (gdim,), name=f"{path} global")
    return FeatureTable(
        object_features={int(i): rows[k] for k, i in enumerate(ids)},
        global_feature=global_feature,
    )
