"""
Gradient checks of the full model at 64-bit precision: the trunk with its
relationship head on a small random graph, and one decoder under teacher
forcing. Used by the ``gradcheck`` command and the test suite.
"""

from __future__ import annotations

import logging
from contextlib import contextmanager
from typing import Dict, Iterator

import numpy as np

from app.decoder.lstm import SentenceDecoder
from app.decoder.vocab import Sentence
from app.ggnn.head import RelationshipHead
from app.ggnn.params import GgnnParams, HeadParams, TrunkDims
from app.ggnn.trunk import GatedGraphTrunk, SceneInputs
from app.models import NUM_RELATIONSHIPS
from app.numeric.gradcheck import gradient_check
from app.numeric.params import ParamStore
from app.numeric.tensor import precision_name, set_precision

logger = logging.getLogger("gradcheck")

GRADCHECK_TOLERANCE = 1e-4

# 5 nodes: a path 0-1-2-3-4 plus the chord 1-3
_EDGES = [(0, 1), (1, 2), (2, 3), (3, 4), (1, 3)]


@contextmanager
def float64() -> Iterator[None]:
    previous = precision_name()
    set_precision("float64")
    try:
        yield
    finally:
        set_precision(previous)


def random_scene(rng: np.random.Generator, num_nodes: int, dims: TrunkDims) -> SceneInputs:
    onehots = np.zeros((num_nodes, dims.num_classes))
    onehots[np.arange(num_nodes), rng.integers(0, dims.num_classes, num_nodes)] = 1.0
    adjacency = np.zeros((num_nodes, num_nodes))
    for u, v in _EDGES:
        if u < num_nodes and v < num_nodes:
            adjacency[u, v] = adjacency[v, u] = 1.0
    return SceneInputs(
        class_onehot=onehots,
        features=rng.normal(size=(num_nodes, dims.feature_dim)),
        global_feature=rng.normal(size=dims.global_dim),
        adjacency=adjacency,
    )


def trunk_gradcheck(seed: int = 0, steps: int = 3, hidden: int = 6, num_actions: int = 0, per_entry: bool = False) -> Dict[str, float]:
    """Relative error per parameter of node init, T-step propagation, fusion and head."""
    with float64():
        rng = np.random.default_rng(seed)
        dims = TrunkDims(num_classes=4, feature_dim=5, global_dim=3, hidden=hidden, num_actions=num_actions, action_dim=3)
        store = ParamStore()
        trunk = GatedGraphTrunk(GgnnParams.create(store, "check.trunk", dims, rng), steps)
        head = RelationshipHead(HeadParams.create(store, "check.relationship", hidden, rng))
        # nonzero biases so their gradients are exercised
        for name in store.names():
            if store[name].ndim == 1:
                store[name][...] = rng.normal(scale=0.1, size=store[name].shape)
        inputs = random_scene(rng, 5, dims)
        targets = rng.integers(0, NUM_RELATIONSHIPS, 5)
        action = 1 if num_actions else None

        def closure(compute_grad: bool) -> float:
            tpass = trunk.forward(inputs, action)
            loss, _, dlogits, cache = head.loss(tpass.output, targets)
            if compute_grad:
                trunk.backward(tpass, head.backward(dlogits, cache))
            return loss

        return gradient_check(closure, store, per_entry=per_entry)


def decoder_gradcheck(seed: int = 0, hidden: int = 6, vocab_size: int = 10, length: int = 5, per_entry: bool = False) -> Dict[str, float]:
    """Relative error per decoder parameter and for the conditioning vector h_o."""
    with float64():
        rng = np.random.default_rng(seed)
        store = ParamStore()
        decoder = SentenceDecoder.create(store, "check.explanation", vocab_size, hidden, rng)
        store.add("check.h_o", (1, hidden), rng)
        sentence = Sentence(tokens=[int(t) for t in rng.integers(4, vocab_size, length)])

        def closure(compute_grad: bool) -> float:
            loss, cache = decoder.batch_loss(store["check.h_o"], [sentence])
            if compute_grad:
                store.accumulate("check.h_o", decoder.backward(cache))
            return loss

        return gradient_check(closure, store, per_entry=per_entry)


def run_gradchecks(seed: int = 0, per_entry: bool = False) -> Dict[str, Dict[str, float]]:
    results = {
        "trunk": trunk_gradcheck(seed, per_entry=per_entry),
        "shared_trunk": trunk_gradcheck(seed, num_actions=3, per_entry=per_entry),
        "decoder": decoder_gradcheck(seed, per_entry=per_entry),
    }
    kind = "entry" if per_entry else "rel"
    for part, errors in results.items():
        worst = max(errors, key=errors.get)
        logger.info("gradcheck %s: max %s err %.2e (%s)", part, kind, errors[worst], worst)
    return results
