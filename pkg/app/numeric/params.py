from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from app.errors import DimensionError
from app.numeric.tensor import get_dtype, glorot_uniform


@dataclass
class StoreSnapshot:
    params: Dict[str, np.ndarray]
    m: Dict[str, np.ndarray]
    v: Dict[str, np.ndarray]
    steps: Dict[str, int]

    def __getitem__(self, name: str) -> np.ndarray:
        return self.params[name]


class ParamStore:
    """
    Named parameters, each with a gradient accumulator and Adam state.

    Usage:
        store = ParamStore()
        W = store.add("trunk.W_c", (128, 9), rng)
        store.grads["trunk.W_c"] += dW
        adam_step(store, config, epoch)

    Components hold the *names*, not the arrays, and always look parameters
    up through the store; loading a checkpoint therefore swaps values in
    place for every component at once.
    """

    def __init__(self) -> None:
        self.params: Dict[str, np.ndarray] = {}
        self.grads: Dict[str, np.ndarray] = {}
        self.m: Dict[str, np.ndarray] = {}
        self.v: Dict[str, np.ndarray] = {}
        self.steps: Dict[str, int] = {}

    # ---- construction ---------------------------------------------------

    def add(
        self,
        name: str,
        shape: Sequence[int],
        rng: Optional[np.random.Generator] = None,
        init: str = "glorot",
    ) -> np.ndarray:
        if name in self.params:
            raise KeyError(f"parameter {name!r} already exists")
        shape = tuple(int(s) for s in shape)
        if init == "zeros" or rng is None:
            value = np.zeros(shape, dtype=get_dtype())
        elif init == "glorot":
            value = glorot_uniform(shape, rng)
        else:
            raise ValueError(f"unknown init {init!r}")
        self.set(name, value)
        return self.params[name]

    def set(self, name: str, value: np.ndarray) -> None:
        value = np.array(value, dtype=value.dtype if value.dtype.kind == "f" else get_dtype())
        self.params[name] = value
        self.grads[name] = np.zeros_like(value)
        self.m[name] = np.zeros_like(value)
        self.v[name] = np.zeros_like(value)
        self.steps[name] = 0

    # ---- access ---------------------------------------------------------

    def __getitem__(self, name: str) -> np.ndarray:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def __iter__(self) -> Iterator[str]:
        return iter(self.params)

    def __len__(self) -> int:
        return len(self.params)

    def names(self, prefix: Union[str, Tuple[str, ...], None] = None) -> List[str]:
        """Parameter names in creation order, optionally only those starting with ``prefix`` (one or several)."""
        if prefix is None:
            return list(self.params)
        return [n for n in self.params if n.startswith(prefix)]

    def accumulate(self, name: str, grad: np.ndarray) -> None:
        target = self.grads[name]
        if grad.shape != target.shape:
            raise DimensionError(f"gradient for {name}: shape {grad.shape} != {target.shape}")
        target += grad

    def zero_grad(self) -> None:
        for g in self.grads.values():
            g.fill(0)

    def num_params(self, prefix: Union[str, Tuple[str, ...], None] = None) -> int:
        return int(sum(self.params[n].size for n in self.names(prefix)))

    def grad_norm(self) -> float:
        return float(np.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in self.grads.values())))

    # ---- snapshots ------------------------------------------------------

    def snapshot(self) -> StoreSnapshot:
        """Copy of the parameters together with the Adam moments and step counters."""
        return StoreSnapshot(
            params={n: p.copy() for n, p in self.params.items()},
            m={n: a.copy() for n, a in self.m.items()},
            v={n: a.copy() for n, a in self.v.items()},
            steps=dict(self.steps),
        )

    def restore(self, snap: StoreSnapshot) -> None:
        """Put parameters and optimizer state back; pending gradients are dropped."""
        for name, value in snap.params.items():
            if name not in self.params:
                raise KeyError(f"unknown parameter {name!r}")
            if value.shape != self.params[name].shape:
                raise DimensionError(f"{name}: stored shape {value.shape} != {self.params[name].shape}")
            self.params[name][...] = value
            self.m[name][...] = snap.m[name]
            self.v[name][...] = snap.v[name]
            self.steps[name] = snap.steps[name]
            self.grads[name].fill(0)

    def astype(self, dtype: type) -> None:
        """Cast parameters and optimizer state in place (precision switch)."""
        for table in (self.params, self.grads, self.m, self.v):
            for name in table:
                table[name] = table[name].astype(dtype)
