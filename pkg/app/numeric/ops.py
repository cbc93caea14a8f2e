"""
Forward and backward of the few operations the model is built from.

Each forward returns its output; the matching ``*_backward`` takes the
upstream gradient plus whatever the forward produced and returns exact
gradients. Operations accept a single vector or a batch of row vectors.
"""

from __future__ import annotations

from typing import Tuple

import numpy as np

from app.errors import DimensionError


# ===========================
# AFFINE
# ===========================

def linear(W: np.ndarray, b: np.ndarray | None, x: np.ndarray) -> np.ndarray:
    """y = W x + b for x of shape (n,) or (N, n)."""
    if W.ndim != 2:
        raise DimensionError(f"linear: W must be a matrix, got shape {W.shape}")
    if x.shape[-1] != W.shape[1]:
        raise DimensionError(f"linear: W{W.shape} cannot multiply x{x.shape}")
    if b is not None and b.shape != (W.shape[0],):
        raise DimensionError(f"linear: b{b.shape} does not match W{W.shape}")
    y = x @ W.T
    if b is not None:
        y = y + b
    return y


def linear_backward(
    dy: np.ndarray, W: np.ndarray, x: np.ndarray
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return (dW, db, dx) for y = W x + b."""
    if dy.ndim == 1:
        return np.outer(dy, x), dy.copy(), W.T @ dy
    return dy.T @ x, dy.sum(axis=0), dy @ W


# ===========================
# ELEMENTWISE
# ===========================

def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def relu_backward(dy: np.ndarray, x: np.ndarray) -> np.ndarray:
    return dy * (x > 0)


def sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid_backward(dy: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Gradient through sigmoid given its output y."""
    return dy * y * (1.0 - y)


def tanh(x: np.ndarray) -> np.ndarray:
    return np.tanh(x)


def tanh_backward(dy: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Gradient through tanh given its output y."""
    return dy * (1.0 - y * y)


def hadamard(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.shape != b.shape:
        raise DimensionError(f"hadamard: shapes {a.shape} and {b.shape} differ")
    return a * b


def hadamard_backward(dy: np.ndarray, a: np.ndarray, b: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    return dy * b, dy * a


# ===========================
# SOFTMAX / LOSS
# ===========================

def softmax(x: np.ndarray) -> np.ndarray:
    """Softmax over the last axis."""
    if x.shape[-1] < 1:
        raise DimensionError("softmax: input must have at least one entry")
    shifted = x - np.max(x, axis=-1, keepdims=True)
    ex = np.exp(shifted)
    return ex / ex.sum(axis=-1, keepdims=True)


def log_softmax(x: np.ndarray) -> np.ndarray:
    shifted = x - np.max(x, axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax_backward(dy: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Gradient through softmax given its output y."""
    return y * (dy - np.sum(dy * y, axis=-1, keepdims=True))


def cross_entropy(logits: np.ndarray, target: int) -> Tuple[float, np.ndarray]:
    """Return (-log softmax(logits)[target], softmax(logits) - onehot(target))."""
    k = logits.shape[-1]
    if not 0 <= int(target) < k:
        raise IndexError(f"cross_entropy: target {target} outside [0, {k})")
    logp = log_softmax(logits)
    grad = np.exp(logp)
    grad[int(target)] -= 1.0
    return float(-logp[int(target)]), grad


def batch_cross_entropy(
    logits: np.ndarray, targets: np.ndarray, weights: np.ndarray | None = None
) -> Tuple[np.ndarray, np.ndarray]:
    """Row-wise cross-entropy; returns (per-row losses, per-row gradients).

    Optional per-row weights scale both loss and gradient.
    """
    n, k = logits.shape
    targets = np.asarray(targets, dtype=np.int64)
    if np.any(targets < 0) or np.any(targets >= k):
        raise IndexError(f"batch_cross_entropy: targets outside [0, {k})")
    logp = log_softmax(logits)
    rows = np.arange(n)
    losses = -logp[rows, targets]
    grad = np.exp(logp)
    grad[rows, targets] -= 1.0
    if weights is not None:
        losses = losses * weights
        grad = grad * weights[:, None]
    return losses, grad
