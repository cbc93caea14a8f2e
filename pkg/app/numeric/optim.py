"""Adam with step decay, global-norm clipping."""

from __future__ import annotations

import logging
from typing import Optional, Tuple, Union

import numpy as np

from app.errors import TrainingDivergenceError
from app.models import AdamConfig
from app.numeric.params import ParamStore

logger = logging.getLogger("optim")


def learning_rate(config: AdamConfig, epoch: int) -> float:
    """
    Effective learning rate for a 1-based epoch.

    Repeating decay multiplies by decay_factor once per epoch after
    decay_after_epochs (epoch 11 is the first decayed epoch for the default
    of 10); one-time decay applies the factor once from that epoch on.
    """
    over = max(0, int(epoch) - config.decay_after_epochs)
    exponent = over if config.decay_repeat else min(over, 1)
    return config.learning_rate * config.decay_factor ** exponent


def clip_global_norm(store: ParamStore, max_norm: Optional[float], prefix: Union[str, Tuple[str, ...], None] = None) -> float:
    """
    Scale gradients (all, or those under ``prefix``) so their joint L2 norm
    is at most max_norm; returns the pre-clip norm.
    """
    names = store.names(prefix)
    norm = float(np.sqrt(sum(float(np.sum(store.grads[n].astype(np.float64) ** 2)) for n in names)))
    if max_norm is not None and norm > max_norm > 0:
        scale = max_norm / norm
        for n in names:
            store.grads[n] *= scale
    return norm


def adam_step(store: ParamStore, config: AdamConfig, epoch: int, prefix: Union[str, Tuple[str, ...], None] = None) -> ParamStore:
    """Apply one bias-corrected Adam update to every parameter (or those under ``prefix``), then zero their gradients."""
    names = store.names(prefix)
    for name in names:
        grad = store.grads[name]
        if not np.all(np.isfinite(grad)):
            raise TrainingDivergenceError(f"non-finite gradient in parameter {name}", parameter=name)

    lr = learning_rate(config, epoch)
    b1, b2, eps = config.beta1, config.beta2, config.epsilon
    for name in names:
        param = store.params[name]
        grad = store.grads[name]
        m = store.m[name]
        v = store.v[name]
        m *= b1
        m += (1.0 - b1) * grad
        v *= b2
        v += (1.0 - b2) * grad * grad
        store.steps[name] += 1
        t = store.steps[name]
        m_hat = m / (1.0 - b1 ** t)
        v_hat = v / (1.0 - b2 ** t)
        param -= (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(param.dtype)
        grad.fill(0)
    return store
