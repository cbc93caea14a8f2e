"""
EVALUATION - HOW GOOD IS A TRAINED MODEL?
=========================================
Loads one or more checkpoints as a bundle (a relationship model plus, if
given, the explanation and consequence decoders) and scores them on a
split: mAcc / mAcc-E per action and BLEU-4 / ROUGE-L / CIDEr per sentence
task.

Think of it like:
- relationship: predict every labeled object, compare with each annotator
- sentences: only objects whose ground truth has sentences are scored;
  a decoder only speaks when the relationship model predicts an exception
- the KB baseline goes through the same scoring with a lookup as predictor
"""

from __future__ import annotations

import hashlib
import logging
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from app.dataset.scenes import Dataset
from app.decoder.lstm import SentenceDecoder
from app.decoder.vocab import Vocabulary
from app.errors import ConfigurationError
from app.harness.network import AffordanceNetwork
from app.harness.samples import SceneTensors, load_split_tensors
from app.knowledge_base.kb import kb_predict
from app.metrics.captions import CaptionEvalItem, caption_scores
from app.metrics.relationship import score_action
from app.models import ACTIONS, SENTENCE_TASKS, ActionScores, EvalReport, Relationship, RunConfig, SentenceScores
from app.numeric import ops

logger = logging.getLogger("metrics")

# (scene, action) -> predicted label index per node
PredictFn = Callable[[SceneTensors, str], np.ndarray]


# ===========================
# RELATIONSHIP SCORING
# ===========================

def relationship_probabilities(network: AffordanceNetwork, scene: SceneTensors, action: str) -> np.ndarray:
    """(M, 7) distribution for every node of the scene."""
    tpass = network.trunk_forward(scene.inputs, action)
    logits, _ = network.heads[action].forward(tpass.output)
    return ops.softmax(logits)


def gather_relationships(scenes: Sequence[SceneTensors], action: str, predict: PredictFn) -> Tuple[List[int], List[List[int]]]:
    """
    Predictions and per-annotator ground truth over every labeled node.

    Scenes with fewer annotators than the most annotated one are scored
    against their primary labels in the missing slots.
    """
    annotators = max(s.labels[action].shape[0] for s in scenes)
    preds: List[int] = []
    gts: List[List[int]] = [[] for _ in range(annotators)]
    for scene in scenes:
        labels = scene.labels[action]
        nodes = np.flatnonzero(labels[0] >= 0)
        if nodes.size == 0:
            continue
        predicted = np.asarray(predict(scene, action))
        preds.extend(int(p) for p in predicted[nodes])
        for k in range(annotators):
            row = labels[k] if k < labels.shape[0] else labels[0]
            gts[k].extend(int(g) for g in row[nodes])
    return preds, gts


def score_predictions(scenes: Sequence[SceneTensors], actions: Sequence[str], predict: PredictFn) -> Dict[str, ActionScores]:
    out: Dict[str, ActionScores] = {}
    for action in actions:
        preds, gts = gather_relationships(scenes, action, predict)
        if not preds:
            raise ValueError(f"no labeled instances for action {action!r} in the evaluated scenes")
        out[action] = score_action(preds, gts)
    return out


def kb_predictor(kb) -> PredictFn:
    def predict(scene: SceneTensors, action: str) -> np.ndarray:
        return np.array([kb_predict(kb, action, node.class_id).index for node in scene.graph.nodes])
    return predict


def oracle_predictor(scene: SceneTensors, action: str) -> np.ndarray:
    """Primary-annotator labels as predictions (unlabeled nodes stay -1)."""
    return scene.labels[action][0]


def data_version(dataset: Dataset) -> str:
    """Short content hash of the manifest and split files."""
    digest = hashlib.sha256()
    for path in (dataset.store.manifest_path, dataset.store.splits_path):
        digest.update(path.read_bytes())
    return digest.hexdigest()[:12]


# ===========================
# CHECKPOINT BUNDLES
# ===========================

def _input_key(config: RunConfig) -> Tuple:
    return (config.topology, config.connectivity, config.ablate_class, config.ablate_object_feature, config.ablate_global, config.seed)


class ModelBundle:
    """
    Checkpoints evaluated together.

    The first checkpoint with a relationship head for an action supplies
    its relationship predictions (and the gate for its sentences); the
    first one with a decoder for (action, kind) supplies those sentences.
    """

    def __init__(self, networks: List[AffordanceNetwork], metas: List[Dict], paths: List[Path]) -> None:
        if not networks:
            raise ConfigurationError("no checkpoints given")
        self.networks = networks
        self.metas = metas
        self.paths = paths
        self._tensors: Dict[Tuple, List[SceneTensors]] = {}

    @classmethod
    def load(cls, paths: Sequence[Path | str]) -> "ModelBundle":
        networks, metas = [], []
        for path in paths:
            network, meta = AffordanceNetwork.load(path)
            networks.append(network)
            metas.append(meta)
        dims = {(n.dims.num_classes, n.dims.feature_dim, n.dims.global_dim) for n in networks}
        if len(dims) > 1:
            raise ConfigurationError(f"checkpoints disagree on input dimensions: {sorted(dims)}")
        return cls(networks, metas, [Path(p) for p in paths])

    @property
    def actions(self) -> List[str]:
        present = {a for n in self.networks for a in n.actions}
        return [a for a in ACTIONS if a in present]

    def relationship_network(self, action: str) -> Optional[AffordanceNetwork]:
        return next((n for n in self.networks if action in n.heads), None)

    def decoder_network(self, action: str, kind: str) -> Optional[AffordanceNetwork]:
        return next((n for n in self.networks if (action, kind) in n.decoders), None)

    def vocab(self, action: str) -> Vocabulary:
        for meta in self.metas:
            tokens = meta.get("vocabularies", {}).get(action)
            if tokens:
                return Vocabulary(tokens)
        raise ConfigurationError(f"no checkpoint carries a vocabulary for action {action!r}")

    @property
    def primary(self) -> AffordanceNetwork:
        return next((n for n in self.networks if n.heads), self.networks[0])

    @property
    def method(self) -> str:
        return self.primary.config.method_name

    def scene_tensors(self, network: AffordanceNetwork, dataset: Dataset, split: str) -> List[SceneTensors]:
        """Split tensors as this network was trained to see them (topology, ablations), cached per input setup."""
        key = (_input_key(network.config), split)
        if key not in self._tensors:
            expected = (network.dims.feature_dim, network.dims.global_dim)
            self._tensors[key] = load_split_tensors(dataset, split, network.config, expected_dims=expected)
        return self._tensors[key]

    def predicted_labels(self, dataset: Dataset, split: str, action: str) -> Optional[Dict[str, np.ndarray]]:
        """scene id -> predicted label per node, or None without a relationship model."""
        network = self.relationship_network(action)
        if network is None:
            return None
        scenes = self.scene_tensors(network, dataset, split)
        return {s.scene_id: np.argmax(relationship_probabilities(network, s, action), axis=1) for s in scenes}


# ===========================
# SENTENCES
# ===========================

def generate_tokens(decoder: SentenceDecoder, vocab: Vocabulary, h_o: np.ndarray, max_len: int) -> List[str]:
    sentence = decoder.decode_greedy(h_o, max_len)
    return vocab.decode(sentence).split()


def sentence_items(
    network: AffordanceNetwork,
    scenes: Sequence[SceneTensors],
    action: str,
    kind: str,
    vocab: Vocabulary,
    gate: Optional[Dict[str, np.ndarray]] = None,
) -> List[CaptionEvalItem]:
    """
    One item per node whose ground truth carries a ``kind`` sentence.

    With ``gate`` (predicted labels per scene) the decoder only runs where an
    exception is predicted; elsewhere the candidate is empty.
    """
    decoder = network.decoders[(action, kind)]
    items: List[CaptionEvalItem] = []
    for scene in scenes:
        refs = scene.references.get((action, kind), {})
        if not refs:
            continue
        outputs = network.trunk_forward(scene.inputs, action).output
        for node in sorted(refs):
            candidate: List[str] = []
            if gate is None or Relationship.from_index(int(gate[scene.scene_id][node])).is_exception:
                candidate = generate_tokens(decoder, vocab, outputs[node], network.config.max_sentence_len)
            items.append(CaptionEvalItem(candidate=candidate, references=refs[node]))
    return items


# ===========================
# REPORTS
# ===========================

def evaluate(checkpoints: Sequence[Path | str], dataset: Dataset, split: str = "test") -> EvalReport:
    bundle = ModelBundle.load(checkpoints)
    if not dataset.split_ids(split):
        raise ValueError(f"split {split!r} is empty")
    actions: Dict[str, ActionScores] = {}
    sentences: Dict[str, Dict[str, SentenceScores]] = {}
    for action in bundle.actions:
        network = bundle.relationship_network(action)
        gate = None
        if network is not None:
            scenes = bundle.scene_tensors(network, dataset, split)
            labels = bundle.predicted_labels(dataset, split, action)
            actions[action] = score_predictions(scenes, [action], lambda s, _a: labels[s.scene_id])[action]
            if network.config.gate_on_prediction:
                gate = labels
        for kind in SENTENCE_TASKS:
            decoder_net = bundle.decoder_network(action, kind)
            if decoder_net is None:
                continue
            scenes = bundle.scene_tensors(decoder_net, dataset, split)
            items = sentence_items(decoder_net, scenes, action, kind, bundle.vocab(action), gate)
            if not items:
                logger.warning("no %s references for action %s on %s; skipping", kind, action, split)
                continue
            scores = caption_scores(items)
            sentences.setdefault(action, {})[kind] = SentenceScores(num_items=len(items), **scores)

    config = bundle.primary.config
    report = EvalReport(
        method=bundle.method,
        split=split,
        actions=actions,
        sentences=sentences,
        metadata={
            "config_hash": config.config_hash(),
            "seed": str(config.seed),
            "data_version": data_version(dataset),
            "checkpoints": ",".join(str(p) for p in bundle.paths),
        },
    )
    logger.info("evaluated %s on %s: %s", report.method, split, {a: round(s.macc_e, 4) for a, s in actions.items()})
    return report


def evaluate_kb(dataset: Dataset, split: str = "test", actions: Optional[Sequence[str]] = None) -> EvalReport:
    """The knowledge-base baseline: class lookup, never an exception."""
    actions = list(actions or dataset.manifest.actions)
    config = RunConfig(actions=actions, data_dir=str(dataset.root))
    scenes = load_split_tensors(dataset, split, config)
    scores = score_predictions(scenes, actions, kb_predictor(dataset.kb))
    return EvalReport(
        method="KB",
        split=split,
        actions=scores,
        metadata={"data_version": data_version(dataset)},
    )
