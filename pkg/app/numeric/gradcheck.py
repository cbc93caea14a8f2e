"""
GRADIENT CHECK - DO THE HAND-WRITTEN BACKWARD PASSES TELL THE TRUTH?
====================================================================
Every backward pass in this package is written by hand. This module nudges
each parameter entry up and down by eps, measures how the loss changes,
and compares that against the analytic gradient.

Think of it like:
- analytic gradient = what the backward pass claims
- numeric gradient = (f(theta + eps) - f(theta - eps)) / (2 eps)
- relative error = |analytic - numeric| / (|analytic| + |numeric|)

The norm-wise error summarizes a whole parameter; the per-entry error is the
worst single entry, so one wrong small entry next to large ones still shows.
"""

from __future__ import annotations

import logging
from typing import Callable, Dict, Iterable, Optional

import numpy as np

from app.errors import ContractError
from app.numeric.params import ParamStore

logger = logging.getLogger("gradcheck")

# closure(compute_grad) -> loss; with compute_grad=True it must fill store.grads
LossClosure = Callable[[bool], float]

# entries whose gradients are both below this are compared absolutely
ENTRY_FLOOR = 1e-7


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Norm-wise relative error; 0 when both gradients vanish."""
    denom = np.linalg.norm(analytic) + np.linalg.norm(numeric)
    if denom == 0.0:
        return 0.0
    return float(np.linalg.norm(analytic - numeric) / denom)


def elementwise_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = ENTRY_FLOOR) -> float:
    """Largest per-entry relative error; 0 for empty inputs."""
    analytic = np.asarray(analytic, dtype=np.float64).reshape(-1)
    numeric = np.asarray(numeric, dtype=np.float64).reshape(-1)
    if analytic.size == 0:
        return 0.0
    denom = np.maximum(np.abs(analytic) + np.abs(numeric), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))


def gradient_check(
    closure: LossClosure,
    store: ParamStore,
    eps: float = 1e-5,
    names: Optional[Iterable[str]] = None,
    max_entries: Optional[int] = None,
    seed: int = 0,
    per_entry: bool = False,
) -> Dict[str, float]:
    """
    Compare analytic and central-difference gradients; return the relative
    error per parameter, norm-wise by default or the worst entry with
    ``per_entry=True``. Both are logged.

    ``max_entries`` limits the number of (seeded, randomly chosen) entries
    checked per parameter so large models stay cheap to check.
    """
    for name, value in store.params.items():
        if value.dtype != np.float64:
            raise ContractError(f"gradient check needs 64-bit parameters; {name} is {value.dtype}")

    first = closure(False)
    second = closure(False)
    if first != second:
        raise ContractError(f"loss closure is not deterministic: {first!r} != {second!r}")

    store.zero_grad()
    closure(True)
    analytic = {n: g.copy() for n, g in store.grads.items()}
    store.zero_grad()

    rng = np.random.default_rng(seed)
    errors: Dict[str, float] = {}
    for name in (list(names) if names is not None else store.names()):
        param = store.params[name]
        flat = param.reshape(-1)
        indices = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            indices = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
        numeric = np.zeros(indices.size)
        for k, idx in enumerate(indices):
            original = flat[idx]
            flat[idx] = original + eps
            plus = closure(False)
            flat[idx] = original - eps
            minus = closure(False)
            flat[idx] = original
            numeric[k] = (plus - minus) / (2.0 * eps)
        claimed = analytic[name].reshape(-1)[indices]
        norm_err = relative_error(claimed, numeric)
        entry_err = elementwise_error(claimed, numeric)
        errors[name] = entry_err if per_entry else norm_err
        logger.debug(
            "gradcheck %s: rel err %.3e, worst entry %.3e over %d entries", name, norm_err, entry_err, indices.size
        )
    return errors
