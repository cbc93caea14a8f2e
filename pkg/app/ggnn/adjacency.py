"""Receiver-by-sender adjacency stored as an edge list, usable in place of a dense matrix."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from app.scene_graph.graph import SceneGraph


@dataclass(frozen=True)
class EdgeAdjacency:
    """
    ``A @ P`` sums the rows of P over each node's senders, like the dense
    A[receiver, sender] would, without materializing M x M. Graphs of a
    minibatch are packed into one block-diagonal adjacency with ``union``.
    """
    senders: np.ndarray
    receivers: np.ndarray
    num_nodes: int

    @classmethod
    def from_graph(cls, graph: SceneGraph) -> "EdgeAdjacency":
        pairs = graph.directed_edges()
        senders = np.array([s for s, _ in pairs], dtype=np.int64)
        receivers = np.array([r for _, r in pairs], dtype=np.int64)
        return cls(senders=senders, receivers=receivers, num_nodes=graph.num_nodes)

    @classmethod
    def union(cls, parts: Sequence["EdgeAdjacency"]) -> "EdgeAdjacency":
        offsets = np.cumsum([0] + [p.num_nodes for p in parts])
        senders = [p.senders + off for p, off in zip(parts, offsets)]
        receivers = [p.receivers + off for p, off in zip(parts, offsets)]
        return cls(
            senders=np.concatenate(senders) if senders else np.zeros(0, dtype=np.int64),
            receivers=np.concatenate(receivers) if receivers else np.zeros(0, dtype=np.int64),
            num_nodes=int(offsets[-1]),
        )

    @property
    def T(self) -> "EdgeAdjacency":
        return EdgeAdjacency(senders=self.receivers, receivers=self.senders, num_nodes=self.num_nodes)

    def __matmul__(self, values: np.ndarray) -> np.ndarray:
        out = np.zeros((self.num_nodes,) + values.shape[1:], dtype=values.dtype)
        if self.senders.size == 0:
            return out
        order = np.argsort(self.receivers, kind="stable")
        receivers = self.receivers[order]
        starts = np.concatenate([[0], np.flatnonzero(receivers[1:] != receivers[:-1]) + 1])
        out[receivers[starts]] = np.add.reduceat(values[self.senders[order]], starts, axis=0)
        return out

    def toarray(self) -> np.ndarray:
        dense = np.zeros((self.num_nodes, self.num_nodes))
        dense[self.receivers, self.senders] = 1.0
        return dense
