"""Relationship head: h_o -> affine -> ReLU -> affine -> softmax over the 7 relationships."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np

from app.ggnn.params import HeadParams
from app.models import RELATIONSHIPS, Relationship
from app.numeric import ops


@dataclass
class RelationshipDistribution:
    probabilities: np.ndarray  # (7,)

    @property
    def predicted(self) -> Relationship:
        return Relationship.from_index(int(np.argmax(self.probabilities)))

    def as_dict(self) -> Dict[str, float]:
        return {rel.value: float(p) for rel, p in zip(RELATIONSHIPS, self.probabilities)}


class RelationshipHead:
    """Shared across all nodes: identical h_o rows give identical distributions."""

    def __init__(self, params: HeadParams) -> None:
        self.params = params

    def forward(self, h_o: np.ndarray):
        """Logits for a batch (N, H); returns (logits, cache)."""
        p = self.params
        pre = ops.linear(p["W1"], p["b1"], h_o)
        hidden = ops.relu(pre)
        logits = ops.linear(p["W2"], p["b2"], hidden)
        return logits, {"h_o": h_o, "pre": pre, "hidden": hidden}

    def loss(self, h_o: np.ndarray, targets: np.ndarray, weights: Optional[np.ndarray] = None):
        """Summed cross-entropy over rows; returns (loss_sum, logits, dlogits, cache)."""
        logits, cache = self.forward(h_o)
        losses, dlogits = ops.batch_cross_entropy(logits, targets, weights)
        return float(losses.sum()), logits, dlogits, cache

    def backward(self, dlogits: np.ndarray, cache) -> np.ndarray:
        """Accumulate head gradients; returns dL/dh_o."""
        p = self.params
        dW2, db2, d_hidden = ops.linear_backward(dlogits, p["W2"], cache["hidden"])
        d_pre = ops.relu_backward(d_hidden, cache["pre"])
        dW1, db1, d_h_o = ops.linear_backward(d_pre, p["W1"], cache["h_o"])
        p.grad("W2", dW2)
        p.grad("b2", db2)
        p.grad("W1", dW1)
        p.grad("b1", db1)
        return d_h_o


def relationship_logits(h_o: np.ndarray, params: HeadParams) -> RelationshipDistribution:
    """Distribution for a single node's output feature."""
    logits, _ = RelationshipHead(params).forward(np.atleast_2d(h_o))
    return RelationshipDistribution(probabilities=ops.softmax(logits[0]))
