"""
GATED GRAPH TRUNK - HOW OBJECTS TELL EACH OTHER ABOUT THE SCENE
===============================================================
Node initialization, T steps of gated message passing and the output
fusion, for all nodes of one graph at once, plus the exact backward pass
(backpropagation through the T steps).

Think of it like:
- h0: each object starts knowing only its class and its own appearance
- each step: every object sums what its neighbors knew one step ago and
  lets a GRU gate decide how much of that to take in
- h_o: the final state, the starting state and the whole-image feature
  squeezed into one vector every prediction head reads
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Union

import numpy as np

from app.errors import ConfigurationError, DimensionError, IncompleteSceneError, UnknownClassError
from app.ggnn.adjacency import EdgeAdjacency
from app.ggnn.params import GRU_GATES, GgnnParams
from app.numeric import ops
from app.numeric.tensor import get_dtype
from app.scene_graph.graph import SceneGraph, adjacency_matrix


@dataclass
class NodeInput:
    class_onehot: np.ndarray
    object_feature: np.ndarray

    @classmethod
    def for_class(cls, class_id: int, num_classes: int, feature: np.ndarray) -> "NodeInput":
        if not 0 <= class_id < num_classes:
            raise UnknownClassError(f"class id {class_id} outside [0, {num_classes})")
        onehot = np.zeros(num_classes, dtype=get_dtype())
        onehot[class_id] = 1.0
        return cls(class_onehot=onehot, object_feature=np.asarray(feature, dtype=get_dtype()))


@dataclass
class SceneInputs:
    """Everything the trunk reads for one graph, aligned with the graph's node order."""
    class_onehot: np.ndarray  # (M, C)
    features: np.ndarray  # (M, D)
    global_feature: Optional[np.ndarray]  # (G,) or one row per node (M, G)
    adjacency: Union[np.ndarray, EdgeAdjacency]  # receiver x sender

    @property
    def num_nodes(self) -> int:
        return int(self.class_onehot.shape[0])


@dataclass
class PropagationTrace:
    """States h^0..h^T plus every intermediate the backward pass needs."""
    states: List[np.ndarray]
    messages: List[np.ndarray] = field(default_factory=list)  # x^t
    update_gates: List[np.ndarray] = field(default_factory=list)  # z^t
    reset_gates: List[np.ndarray] = field(default_factory=list)  # r^t
    candidates: List[np.ndarray] = field(default_factory=list)  # h-hat^t
    init_cache: Dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def steps(self) -> int:
        return len(self.states) - 1

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]

    @property
    def initial(self) -> np.ndarray:
        return self.states[0]


# ===========================
# NODE INITIALIZATION
# ===========================

def init_nodes(onehots: np.ndarray, features: np.ndarray, params: GgnnParams):
    """h0 = relu(W_c c) * relu(W_f phi) for every row; returns (h0, cache)."""
    W_c, W_f = params["W_c"], params["W_f"]
    num_classes = W_c.shape[1]
    if onehots.shape[-1] != num_classes:
        hot = np.flatnonzero(np.atleast_2d(onehots).any(axis=0))
        if hot.size and hot[-1] >= num_classes:
            raise UnknownClassError(f"class index {hot[-1]} outside [0, {num_classes})")
        raise DimensionError(f"class one-hot has {onehots.shape[-1]} entries, W_c expects {num_classes}")
    a_c = ops.linear(W_c, None, onehots)
    a_f = ops.linear(W_f, None, features)
    r_c, r_f = ops.relu(a_c), ops.relu(a_f)
    cache = {"onehots": onehots, "features": features, "a_c": a_c, "a_f": a_f, "r_c": r_c, "r_f": r_f}
    return ops.hadamard(r_c, r_f), cache


def init_node(node: NodeInput, params: GgnnParams) -> np.ndarray:
    h0, _ = init_nodes(node.class_onehot[None, :], node.object_feature[None, :], params)
    return h0[0]


# ===========================
# MESSAGE PASSING
# ===========================

def aggregate(neighbor_states: Sequence[np.ndarray], params: GgnnParams) -> np.ndarray:
    """x = sum over neighbors of W_p h_neighbor, plus b_p once."""
    x = np.array(params["b_p"], copy=True)
    for h in neighbor_states:
        x = x + ops.linear(params["W_p"], None, h)
    return x


def aggregate_all(adjacency: Union[np.ndarray, EdgeAdjacency], states: np.ndarray, params: GgnnParams) -> np.ndarray:
    projected = ops.linear(params["W_p"], None, states)
    return adjacency @ projected + params["b_p"]


def gru_step(x: np.ndarray, h_prev: np.ndarray, params: GgnnParams):
    """One gated update for a batch of nodes; returns (h, z, r, candidate)."""
    z = ops.sigmoid(ops.linear(params["W_z"], params["b_z"], x) + ops.linear(params["U_z"], None, h_prev))
    r = ops.sigmoid(ops.linear(params["W_r"], params["b_r"], x) + ops.linear(params["U_r"], None, h_prev))
    candidate = ops.tanh(ops.linear(params["W_h"], params["b_h"], x) + ops.linear(params["U_h"], None, r * h_prev))
    h = (1.0 - z) * h_prev + z * candidate
    return h, z, r, candidate


def gru_update(x: np.ndarray, h_prev: np.ndarray, params: GgnnParams) -> np.ndarray:
    return gru_step(x, h_prev, params)[0]


def propagate_arrays(
    adjacency: Union[np.ndarray, EdgeAdjacency],
    onehots: np.ndarray,
    features: np.ndarray,
    params: GgnnParams,
    steps: int,
) -> PropagationTrace:
    """Synchronous propagation: every message of step t is computed from step t-1 states."""
    if steps < 0:
        raise ValueError(f"propagation steps must be >= 0, got {steps}")
    h0, init_cache = init_nodes(onehots, features, params)
    trace = PropagationTrace(states=[h0], init_cache=init_cache)
    h = h0
    for _ in range(steps):
        x = aggregate_all(adjacency, h, params)
        h, z, r, cand = gru_step(x, h, params)
        trace.messages.append(x)
        trace.update_gates.append(z)
        trace.reset_gates.append(r)
        trace.candidates.append(cand)
        trace.states.append(h)
    return trace


def propagate(
    graph: SceneGraph,
    inputs: Mapping[int, NodeInput],
    params: GgnnParams,
    steps: int,
) -> PropagationTrace:
    """Run the trunk over a scene graph; ``inputs`` maps instance id -> NodeInput."""
    missing = [n.instance_id for n in graph.nodes if n.instance_id not in inputs]
    if missing:
        raise IncompleteSceneError(f"no node input for instances {missing}")
    onehots = np.stack([inputs[n.instance_id].class_onehot for n in graph.nodes])
    features = np.stack([inputs[n.instance_id].object_feature for n in graph.nodes])
    adjacency = adjacency_matrix(graph).astype(onehots.dtype)
    return propagate_arrays(adjacency, onehots, features, params, steps)


# ===========================
# OUTPUT FUSION
# ===========================

def output_feature(
    h_final: np.ndarray,
    h_initial: np.ndarray,
    global_feature: Optional[np.ndarray],
    params: GgnnParams,
    action_index: Optional[int] = None,
):
    """h_o = relu(W_ho [h^T, h^0, phi(I)(, action)]); returns (h_o, cache). Works on one node or a batch."""
    if global_feature is None:
        raise ConfigurationError("output fusion needs the global image feature")
    expected = params.dims.global_dim
    if global_feature.shape[-1] != expected:
        raise DimensionError(f"global feature has {global_feature.shape[-1]} entries, model expects {expected}")
    batched = h_final.ndim == 2
    rows = h_final.shape[0] if batched else 1
    blocks = [np.atleast_2d(h_final), np.atleast_2d(h_initial), global_feature if global_feature.ndim == 2 else np.tile(global_feature, (rows, 1))]
    if params.dims.num_actions:
        if action_index is None:
            raise ConfigurationError("shared multi-action trunk needs an action index")
        blocks.append(np.tile(params["action_embedding"][action_index], (rows, 1)))
    fused_in = np.concatenate(blocks, axis=1)
    pre = ops.linear(params["W_ho"], None, fused_in)
    h_o = ops.relu(pre)
    cache = {"fused_in": fused_in, "pre": pre, "action_index": action_index}
    return (h_o if batched else h_o[0]), cache


# ===========================
# TRUNK = INIT + PROPAGATION + FUSION
# ===========================

@dataclass
class TrunkPass:
    trace: PropagationTrace
    fusion_cache: Dict[str, object]
    output: np.ndarray  # (M, H)
    inputs: SceneInputs


class GatedGraphTrunk:
    """Forward and backward of the whole trunk for one graph at a time."""

    def __init__(self, params: GgnnParams, steps: int) -> None:
        self.params = params
        self.steps = steps

    def forward(self, inputs: SceneInputs, action_index: Optional[int] = None) -> TrunkPass:
        trace = propagate_arrays(inputs.adjacency, inputs.class_onehot, inputs.features, self.params, self.steps)
        h_o, cache = output_feature(trace.final, trace.initial, inputs.global_feature, self.params, action_index)
        return TrunkPass(trace=trace, fusion_cache=cache, output=h_o, inputs=inputs)

    def backward(self, tpass: TrunkPass, d_output: np.ndarray) -> None:
        """Accumulate parameter gradients for dL/dh_o (shape (M, H))."""
        p = self.params
        hidden = p.dims.hidden
        global_dim = p.dims.global_dim
        cache = tpass.fusion_cache
        trace = tpass.trace

        d_pre = ops.relu_backward(d_output, cache["pre"])
        dW_ho, _, d_in = ops.linear_backward(d_pre, p["W_ho"], cache["fused_in"])
        p.grad("W_ho", dW_ho)
        if p.dims.num_actions:
            d_action = d_in[:, 2 * hidden + global_dim:].sum(axis=0)
            d_table = np.zeros_like(p["action_embedding"])
            d_table[cache["action_index"]] = d_action
            p.grad("action_embedding", d_table)

        d_h = d_in[:, :hidden]
        d_h0_skip = d_in[:, hidden:2 * hidden]

        adjacency = tpass.inputs.adjacency
        grads = {key: np.zeros_like(p[key]) for key in
                 ["W_p", "b_p"] + [f"{kind}_{g}" for g in GRU_GATES for kind in ("W", "U", "b")]}
        for t in range(trace.steps, 0, -1):
            h_prev = trace.states[t - 1]
            x = trace.messages[t - 1]
            z = trace.update_gates[t - 1]
            r = trace.reset_gates[t - 1]
            cand = trace.candidates[t - 1]

            d_z = d_h * (cand - h_prev)
            d_cand = d_h * z
            d_prev = d_h * (1.0 - z)

            d_a_h = ops.tanh_backward(d_cand, cand)
            grads["W_h"] += d_a_h.T @ x
            grads["U_h"] += d_a_h.T @ (r * h_prev)
            grads["b_h"] += d_a_h.sum(axis=0)
            d_x = d_a_h @ p["W_h"]
            d_rh = d_a_h @ p["U_h"]
            d_r = d_rh * h_prev
            d_prev += d_rh * r

            d_a_r = ops.sigmoid_backward(d_r, r)
            grads["W_r"] += d_a_r.T @ x
            grads["U_r"] += d_a_r.T @ h_prev
            grads["b_r"] += d_a_r.sum(axis=0)
            d_x += d_a_r @ p["W_r"]
            d_prev += d_a_r @ p["U_r"]

            d_a_z = ops.sigmoid_backward(d_z, z)
            grads["W_z"] += d_a_z.T @ x
            grads["U_z"] += d_a_z.T @ h_prev
            grads["b_z"] += d_a_z.sum(axis=0)
            d_x += d_a_z @ p["W_z"]
            d_prev += d_a_z @ p["U_z"]

            grads["b_p"] += d_x.sum(axis=0)
            d_projected = adjacency.T @ d_x
            grads["W_p"] += d_projected.T @ h_prev
            d_prev += d_projected @ p["W_p"]
            d_h = d_prev

        for key, value in grads.items():
            p.grad(key, value)

        d_h0 = d_h + d_h0_skip
        init = trace.init_cache
        d_rc, d_rf = ops.hadamard_backward(d_h0, init["r_c"], init["r_f"])
        d_ac = ops.relu_backward(d_rc, init["a_c"])
        d_af = ops.relu_backward(d_rf, init["a_f"])
        p.grad("W_c", d_ac.T @ init["onehots"])
        p.grad("W_f", d_af.T @ init["features"])
