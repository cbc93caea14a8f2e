"""
TENSORS - THE NUMBERS EVERYTHING IS MADE OF
===========================================
A tensor here is a plain numpy array. This module only decides the
precision all new arrays are created with and checks arrays coming from
outside (files, callers) before the model touches them.

Think of it like:
- float64 = careful mode (gradient checking)
- float32 = fast mode (training)
- One switch (set_precision) flips between them.
"""

from __future__ import annotations

import os
from typing import Iterable, Sequence

import numpy as np

from app.errors import DataValidationError, DimensionError

_PRECISIONS = {"float32": np.float32, "float64": np.float64}

_dtype = _PRECISIONS.get(os.getenv("AFFORD_PRECISION", "float32"), np.float32)


def set_precision(name: str) -> None:
    """Select the dtype new tensors and parameters are created with."""
    global _dtype
    if name not in _PRECISIONS:
        raise ValueError(f"unknown precision {name!r}; expected one of {sorted(_PRECISIONS)}")
    _dtype = _PRECISIONS[name]


def get_dtype() -> type:
    return _dtype


def precision_name() -> str:
    return "float64" if _dtype is np.float64 else "float32"


def as_tensor(values: Iterable | np.ndarray, shape: Sequence[int] | None = None, name: str = "tensor") -> np.ndarray:
    """Convert input data to a finite array of the active precision.

    Non-finite values are rejected here so they never reach a forward pass.
    """
    arr = np.asarray(values, dtype=_dtype)
    if shape is not None:
        expected = tuple(int(s) for s in shape)
        if arr.size != int(np.prod(expected)):
            raise DimensionError(f"{name}: {arr.size} values do not fill shape {expected}")
        arr = arr.reshape(expected)
    if not np.all(np.isfinite(arr)):
        raise DataValidationError(f"{name}: contains NaN or Inf")
    return arr


def zeros(shape: Sequence[int] | int) -> np.ndarray:
    return np.zeros(shape, dtype=_dtype)


def glorot_uniform(shape: Sequence[int], rng: np.random.Generator) -> np.ndarray:
    """Uniform in +-sqrt(6 / (fan_in + fan_out)); rows are fan_out, columns fan_in."""
    fan_out, fan_in = (shape[0], shape[1]) if len(shape) == 2 else (shape[0], shape[0])
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=tuple(shape)).astype(_dtype)


def check_shape(name: str, arr: np.ndarray, shape: Sequence[int]) -> None:
    if tuple(arr.shape) != tuple(shape):
        raise DimensionError(f"{name}: expected shape {tuple(shape)}, got {tuple(arr.shape)}")
