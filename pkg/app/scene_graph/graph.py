"""
SCENE GRAPHS - WHO TOUCHES WHOM?
================================
Turns an instance map into the graph the GGNN runs on.

Think of it like:
- Node = one object instance (with its class, box and size)
- Edge = two objects whose masks touch
- Topology variants replace the edges: fully connected, a random chain,
  or no edges at all (unary)
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field, replace
from typing import Dict, FrozenSet, List, Literal, Optional, Set, Tuple

import numpy as np

from app.errors import EmptySceneError
from app.scene_graph.instance_map import InstanceMap

TopologyName = Literal["spatial", "fully_connected", "chain", "unary"]
TOPOLOGIES: Tuple[str, ...] = ("spatial", "fully_connected", "chain", "unary")

Edge = FrozenSet[int]


@dataclass(frozen=True)
class BoundingBox:
    """Inclusive pixel box."""
    x_min: int
    y_min: int
    x_max: int
    y_max: int

    def __post_init__(self) -> None:
        if self.x_min > self.x_max or self.y_min > self.y_max:
            raise ValueError(f"degenerate box {self}")

    def as_list(self) -> List[int]:
        return [self.x_min, self.y_min, self.x_max, self.y_max]

    def contains(self, x: int, y: int) -> bool:
        return self.x_min <= x <= self.x_max and self.y_min <= y <= self.y_max


@dataclass(frozen=True)
class GraphNode:
    instance_id: int
    class_id: int
    bbox: BoundingBox
    pixel_count: int
    context_box: BoundingBox


@dataclass
class SceneGraph:
    """
    Nodes are ordered by instance id; node index = position in ``nodes``.

    ``edges`` holds unordered index pairs for spatial / fully_connected;
    for chain it holds the M-1 consecutive pairs of ``chain_order`` and the
    direction is earlier -> later in that order. ``spatial_edges`` always
    keeps the mask-adjacency edges so any variant can be derived again.
    """
    nodes: List[GraphNode]
    edges: Set[Edge]
    topology: str = "spatial"
    spatial_edges: Set[Edge] = field(default_factory=set)
    chain_order: Optional[List[int]] = None
    chain_seed: Optional[int] = None

    @property
    def num_nodes(self) -> int:
        return len(self.nodes)

    def index_of(self) -> Dict[int, int]:
        return {n.instance_id: i for i, n in enumerate(self.nodes)}

    def directed_edges(self) -> List[Tuple[int, int]]:
        """(sender, receiver) index pairs messages travel along."""
        if self.topology == "chain":
            order = self.chain_order or []
            return [(order[i], order[i + 1]) for i in range(len(order) - 1)]
        pairs: List[Tuple[int, int]] = []
        for edge in sorted(tuple(sorted(e)) for e in self.edges):
            u, v = edge
            pairs.extend([(u, v), (v, u)])
        return pairs

    def neighbors(self, index: int) -> List[int]:
        """Senders whose messages reach node ``index`` (chain: predecessor only)."""
        return sorted(s for s, r in self.directed_edges() if r == index)


def expand_bbox(box: BoundingBox, factor: float, width: int, height: int) -> BoundingBox:
    """Scale a box about its center by ``factor`` per side length, then clamp to the image."""
    if factor < 1:
        raise ValueError(f"expansion factor must be >= 1, got {factor}")
    # continuous extent of an inclusive box is [min, max + 1)
    cx = (box.x_min + box.x_max + 1) / 2.0
    cy = (box.y_min + box.y_max + 1) / 2.0
    half_w = (box.x_max - box.x_min + 1) * factor / 2.0
    half_h = (box.y_max - box.y_min + 1) * factor / 2.0
    x0 = int(np.floor(cx - half_w + 1e-9))
    y0 = int(np.floor(cy - half_h + 1e-9))
    x1 = int(np.ceil(cx + half_w - 1e-9)) - 1
    y1 = int(np.ceil(cy + half_h - 1e-9)) - 1
    return BoundingBox(
        x_min=max(0, x0),
        y_min=max(0, y0),
        x_max=min(width - 1, x1),
        y_max=min(height - 1, y1),
    )


def _touching_pairs(pixels: np.ndarray, connectivity: int) -> Set[Edge]:
    offsets = [(0, 1), (1, 0)]
    if connectivity == 8:
        offsets += [(1, 1), (1, -1)]
    h, w = pixels.shape
    pairs: Set[Edge] = set()
    for dy, dx in offsets:
        x0, x1 = max(0, -dx), w - max(0, dx)
        a = pixels[0:h - dy, x0:x1]
        b = pixels[dy:h, x0 + dx:x1 + dx]
        mask = (a != 0) & (b != 0) & (a != b)
        if not np.any(mask):
            continue
        stacked = np.unique(np.stack([np.minimum(a[mask], b[mask]), np.maximum(a[mask], b[mask])], axis=1), axis=0)
        pairs.update(frozenset((int(u), int(v))) for u, v in stacked)
    return pairs


def build_spatial_graph(
    imap: InstanceMap, connectivity: int = 4, expansion: float = 1.2
) -> SceneGraph:
    """One node per instance; an edge wherever two masks are 4- (or 8-) adjacent."""
    ids = imap.instance_ids()
    if not ids:
        raise EmptySceneError("cannot build a graph from a map without instances")
    if connectivity not in (4, 8):
        raise ValueError(f"connectivity must be 4 or 8, got {connectivity}")

    pixels = imap.pixel_instance
    nodes: List[GraphNode] = []
    for iid in ids:
        ys, xs = np.nonzero(pixels == iid)
        box = BoundingBox(int(xs.min()), int(ys.min()), int(xs.max()), int(ys.max()))
        nodes.append(
            GraphNode(
                instance_id=iid,
                class_id=int(imap.instance_class[iid]),
                bbox=box,
                pixel_count=int(xs.size),
                context_box=expand_bbox(box, expansion, imap.width, imap.height),
            )
        )

    index = {iid: i for i, iid in enumerate(ids)}
    edges = {frozenset(index[i] for i in pair) for pair in _touching_pairs(pixels, connectivity)}
    return SceneGraph(nodes=nodes, edges=set(edges), topology="spatial", spatial_edges=set(edges))


def make_variant(graph: SceneGraph, topology: str, rng_seed: int = 0) -> SceneGraph:
    """Same nodes, edges replaced according to ``topology``."""
    m = graph.num_nodes
    if m < 1:
        raise EmptySceneError("graph has no nodes")
    if topology == "spatial":
        return replace(graph, edges=set(graph.spatial_edges), topology="spatial", chain_order=None, chain_seed=None)
    if topology == "unary":
        return replace(graph, edges=set(), topology="unary", chain_order=None, chain_seed=None)
    if topology == "fully_connected":
        edges = {frozenset((u, v)) for u in range(m) for v in range(u + 1, m)}
        return replace(graph, edges=edges, topology="fully_connected", chain_order=None, chain_seed=None)
    if topology == "chain":
        order = [int(i) for i in np.random.default_rng(rng_seed).permutation(m)]
        edges = {frozenset((order[i], order[i + 1])) for i in range(m - 1)}
        return replace(graph, edges=edges, topology="chain", chain_order=order, chain_seed=int(rng_seed))
    raise ValueError(f"unknown topology {topology!r}; expected one of {TOPOLOGIES}")


def adjacency_matrix(graph: SceneGraph) -> np.ndarray:
    """A[receiver, sender] = 1 where a message flows from sender to receiver."""
    m = graph.num_nodes
    adj = np.zeros((m, m), dtype=np.float64)
    for sender, receiver in graph.directed_edges():
        adj[receiver, sender] = 1.0
    return adj


def graph_distances(graph: SceneGraph, source: int, undirected: bool = True) -> Dict[int, int]:
    """Hop distance from ``source`` to every reachable node (BFS)."""
    neighbors: Dict[int, Set[int]] = {i: set() for i in range(graph.num_nodes)}
    for sender, receiver in graph.directed_edges():
        neighbors[sender].add(receiver)
        if undirected:
            neighbors[receiver].add(sender)
    dist = {source: 0}
    queue = deque([source])
    while queue:
        cur = queue.popleft()
        for nxt in sorted(neighbors[cur]):
            if nxt not in dist:
                dist[nxt] = dist[cur] + 1
                queue.append(nxt)
    return dist
