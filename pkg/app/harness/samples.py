"""
SAMPLES - FROM FILES ON DISK TO ARRAYS THE NETWORK EATS
=======================================================
Each scene becomes a SceneTensors: the graph (in the run's topology), the
per-node inputs with ablations applied, and the targets of every task.
A training sample is one labeled node of one scene for one action.

Think of it like:
- SceneTensors = one scene, ready to run
- NodeSample = "node 4 of scene 17, for action sit"
- pack_scenes = glue several scenes into one big graph for a minibatch
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from app.dataset.scenes import Dataset, LoadedScene
from app.decoder.vocab import Sentence, Vocabulary, tokenize
from app.errors import DimensionError
from app.ggnn.adjacency import EdgeAdjacency
from app.ggnn.trunk import SceneInputs
from app.models import RunConfig
from app.numeric.tensor import as_tensor, get_dtype
from app.scene_graph.graph import SceneGraph, build_spatial_graph, make_variant

SentenceKey = Tuple[str, str]  # (action, "explanation" | "consequence")


@dataclass
class SceneTensors:
    scene_id: str
    graph: SceneGraph
    inputs: SceneInputs
    # action -> per-node label index per annotator (annotators x M); -1 where unlabeled
    labels: Dict[str, np.ndarray] = field(default_factory=dict)
    # (action, kind) -> node index -> encoded primary-annotator sentence
    sentences: Dict[SentenceKey, Dict[int, Sentence]] = field(default_factory=dict)
    # (action, kind) -> node index -> token lists of every annotator that wrote one
    references: Dict[SentenceKey, Dict[int, List[List[str]]]] = field(default_factory=dict)

    @property
    def num_nodes(self) -> int:
        return self.graph.num_nodes


@dataclass(frozen=True)
class NodeSample:
    scene: int
    node: int
    action: str


def chain_seed(run_seed: int, scene_id: str) -> int:
    """Per-scene seed of the random chain order, stable across runs and processes."""
    return (zlib.crc32(scene_id.encode()) ^ (run_seed * 2654435761)) & 0xFFFFFFFF


def scene_inputs(scene: LoadedScene, graph: SceneGraph, num_classes: int, config: RunConfig, expected_dims: Optional[Tuple[int, int]] = None) -> SceneInputs:
    """Node inputs in graph order with the run's ablations applied (ablated inputs are zeros)."""
    dtype = get_dtype()
    m = graph.num_nodes
    onehots = np.zeros((m, num_classes), dtype=dtype)
    feats = scene.features
    if expected_dims is not None and (feats.dim, feats.global_dim) != tuple(expected_dims):
        raise DimensionError(
            f"scene {scene.scene_id}: features are {feats.dim}/{feats.global_dim}-dimensional, "
            f"model expects {expected_dims[0]}/{expected_dims[1]}"
        )
    features = np.zeros((m, feats.dim), dtype=dtype)
    for i, node in enumerate(graph.nodes):
        if not config.ablate_class:
            onehots[i, node.class_id] = 1.0
        if not config.ablate_object_feature:
            features[i] = as_tensor(feats.object_features[node.instance_id], name=f"{scene.scene_id}/{node.instance_id}")
    global_feature = np.zeros(feats.global_dim, dtype=dtype) if config.ablate_global else as_tensor(feats.global_feature)
    return SceneInputs(
        class_onehot=onehots,
        features=features,
        global_feature=global_feature,
        adjacency=EdgeAdjacency.from_graph(graph),
    )


def build_scene_tensors(
    scene: LoadedScene,
    config: RunConfig,
    num_classes: int,
    vocabs: Optional[Dict[str, Vocabulary]] = None,
    expected_dims: Optional[Tuple[int, int]] = None,
) -> SceneTensors:
    base = build_spatial_graph(scene.instance_map, connectivity=config.connectivity)
    graph = make_variant(base, config.topology, rng_seed=chain_seed(config.seed, scene.scene_id))
    tensors = SceneTensors(
        scene_id=scene.scene_id,
        graph=graph,
        inputs=scene_inputs(scene, graph, num_classes, config, expected_dims),
    )
    index = graph.index_of()
    for action in config.actions:
        entries = scene.record.labeled_instances(action)
        annotators = max([a.num_annotators for a in entries.values()] or [1])
        labels = np.full((annotators, graph.num_nodes), -1, dtype=np.int64)
        for iid, ann in entries.items():
            for k in range(annotators):
                labels[k, index[iid]] = ann.annotator(k).label.index
        tensors.labels[action] = labels
        for kind in ("explanation", "consequence"):
            encoded: Dict[int, Sentence] = {}
            refs: Dict[int, List[List[str]]] = {}
            for iid, ann in entries.items():
                texts = [getattr(ann.annotator(k), kind) for k in range(ann.num_annotators)]
                texts = [t for t in texts if t]
                if not texts:
                    continue
                refs[index[iid]] = [tokenize(t) for t in texts]
                primary = getattr(ann, kind)
                if primary and vocabs is not None and action in vocabs:
                    sentence = vocabs[action].encode(primary)
                    if len(sentence):
                        encoded[index[iid]] = sentence
            tensors.sentences[(action, kind)] = encoded
            tensors.references[(action, kind)] = refs
    return tensors


def load_split_tensors(
    dataset: Dataset,
    split: str,
    config: RunConfig,
    vocabs: Optional[Dict[str, Vocabulary]] = None,
    expected_dims: Optional[Tuple[int, int]] = None,
) -> List[SceneTensors]:
    ids = dataset.split_ids(split)
    if not ids:
        raise ValueError(f"split {split!r} is empty")
    return [build_scene_tensors(s, config, len(dataset.class_names), vocabs, expected_dims) for s in dataset.scenes(ids)]


def relationship_samples(scenes: Sequence[SceneTensors], actions: Sequence[str]) -> List[NodeSample]:
    """Every labeled (scene, node, action), in a fixed order."""
    out: List[NodeSample] = []
    for s, scene in enumerate(scenes):
        for action in actions:
            for node in np.flatnonzero(scene.labels[action][0] >= 0):
                out.append(NodeSample(scene=s, node=int(node), action=action))
    return out


def sentence_samples(scenes: Sequence[SceneTensors], actions: Sequence[str], kind: str) -> List[NodeSample]:
    out: List[NodeSample] = []
    for s, scene in enumerate(scenes):
        for action in actions:
            for node in sorted(scene.sentences.get((action, kind), {})):
                out.append(NodeSample(scene=s, node=node, action=action))
    return out


@dataclass
class PackedScenes:
    """Several scenes as one disjoint-union graph; ``offsets[k]`` is scene k's first row."""
    inputs: SceneInputs
    scene_indices: List[int]
    offsets: Dict[int, int]

    def row(self, sample: NodeSample) -> int:
        return self.offsets[sample.scene] + sample.node


def pack_scenes(scenes: Sequence[SceneTensors], indices: Sequence[int]) -> PackedScenes:
    ordered = sorted(set(int(i) for i in indices))
    parts = [scenes[i].inputs for i in ordered]
    offsets: Dict[int, int] = {}
    start = 0
    for i, part in zip(ordered, parts):
        offsets[i] = start
        start += part.num_nodes
    globals_per_node = np.concatenate([np.tile(p.global_feature, (p.num_nodes, 1)) for p in parts])
    inputs = SceneInputs(
        class_onehot=np.concatenate([p.class_onehot for p in parts]),
        features=np.concatenate([p.features for p in parts]),
        global_feature=globals_per_node,
        adjacency=EdgeAdjacency.union([p.adjacency for p in parts]),
    )
    return PackedScenes(inputs=inputs, scene_indices=ordered, offsets=offsets)
