"""Parameter layout of the gated graph trunk and the relationship head."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from app.models import NUM_RELATIONSHIPS
from app.numeric.params import ParamStore

GRU_GATES = ("z", "r", "h")

# order of the blocks concatenated before the output fusion layer
FUSION_ORDER = ["h_T", "h_0", "global", "action"]


@dataclass
class TrunkDims:
    num_classes: int
    feature_dim: int
    global_dim: int
    hidden: int = 128
    num_actions: int = 0
    action_dim: int = 16

    @property
    def fusion_dim(self) -> int:
        extra = self.action_dim if self.num_actions else 0
        return 2 * self.hidden + self.global_dim + extra


class GgnnParams:
    """
    View of one trunk's weights inside a ParamStore.

    Holds W_c, W_f (node init), W_p, b_p (aggregation), the GRU gate
    matrices W_*, U_*, b_* and W_ho (output fusion, no bias). With
    ``num_actions`` > 0 an action embedding table is added and its row is
    appended to the fusion input (shared multi-action trunk).
    """

    def __init__(self, store: ParamStore, prefix: str, dims: TrunkDims) -> None:
        self.store = store
        self.prefix = prefix
        self.dims = dims

    def name(self, key: str) -> str:
        return f"{self.prefix}.{key}"

    def __getitem__(self, key: str) -> np.ndarray:
        return self.store.params[self.name(key)]

    def grad(self, key: str, value: np.ndarray) -> None:
        self.store.accumulate(self.name(key), value)

    @classmethod
    def create(cls, store: ParamStore, prefix: str, dims: TrunkDims, rng: np.random.Generator) -> "GgnnParams":
        h = dims.hidden
        store.add(f"{prefix}.W_c", (h, dims.num_classes), rng)
        store.add(f"{prefix}.W_f", (h, dims.feature_dim), rng)
        store.add(f"{prefix}.W_p", (h, h), rng)
        store.add(f"{prefix}.b_p", (h,), init="zeros")
        for gate in GRU_GATES:
            store.add(f"{prefix}.W_{gate}", (h, h), rng)
            store.add(f"{prefix}.U_{gate}", (h, h), rng)
            store.add(f"{prefix}.b_{gate}", (h,), init="zeros")
        store.add(f"{prefix}.W_ho", (h, dims.fusion_dim), rng)
        if dims.num_actions:
            store.add(f"{prefix}.action_embedding", (dims.num_actions, dims.action_dim), rng)
        return cls(store, prefix, dims)


class HeadParams:
    """Two affine layers H -> H -> 7 with ReLU between (the relationship scorer)."""

    def __init__(self, store: ParamStore, prefix: str) -> None:
        self.store = store
        self.prefix = prefix

    def __getitem__(self, key: str) -> np.ndarray:
        return self.store.params[f"{self.prefix}.{key}"]

    def grad(self, key: str, value: np.ndarray) -> None:
        self.store.accumulate(f"{self.prefix}.{key}", value)

    @classmethod
    def create(cls, store: ParamStore, prefix: str, hidden: int, rng: np.random.Generator) -> "HeadParams":
        store.add(f"{prefix}.W1", (hidden, hidden), rng)
        store.add(f"{prefix}.b1", (hidden,), init="zeros")
        store.add(f"{prefix}.W2", (NUM_RELATIONSHIPS, hidden), rng)
        store.add(f"{prefix}.b2", (NUM_RELATIONSHIPS,), init="zeros")
        return cls(store, prefix)
