"""
PREDICT - THE AFFORDANCE TRIPLE FOR EVERY OBJECT OF ONE SCENE
=============================================================
For each action and each instance: the relationship with its full 7-way
distribution and, when an exception is predicted, a greedy explanation and
consequence.

Think of it like:
- "sit on chair #3?" -> PhysicalObstacle (0.81), "the chair is taken by a
  person", "you would sit on the person"
- Positive / FirmlyNegative predictions carry no sentences
"""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Dict, List, Sequence

import numpy as np

from app.dataset.scenes import LoadedScene
from app.harness.evaluate import ModelBundle, generate_tokens, relationship_probabilities
from app.harness.network import AffordanceNetwork
from app.harness.samples import SceneTensors, build_scene_tensors
from app.errors import ConfigurationError
from app.models import RELATIONSHIPS, SENTENCE_TASKS, InstancePrediction

logger = logging.getLogger("predict")


class Predictor:
    def __init__(self, bundle: ModelBundle) -> None:
        self.bundle = bundle
        self.class_names: List[str] = bundle.metas[0].get("class_names", [])
        self.actions = [a for a in bundle.actions if bundle.relationship_network(a) is not None]
        if not self.actions:
            raise ConfigurationError("prediction needs at least one checkpoint with a relationship head")

    @classmethod
    def load(cls, checkpoints: Sequence[Path | str]) -> "Predictor":
        return cls(ModelBundle.load(checkpoints))

    def _tensors(self, network: AffordanceNetwork, scene: LoadedScene, cache: Dict[int, SceneTensors]) -> SceneTensors:
        if id(network) not in cache:
            expected = (network.dims.feature_dim, network.dims.global_dim)
            cache[id(network)] = build_scene_tensors(scene, network.config, network.dims.num_classes, expected_dims=expected)
        return cache[id(network)]

    def predict(self, scene: LoadedScene) -> List[InstancePrediction]:
        cache: Dict[int, SceneTensors] = {}
        out: List[InstancePrediction] = []
        for action in self.actions:
            network = self.bundle.relationship_network(action)
            tensors = self._tensors(network, scene, cache)
            probs = relationship_probabilities(network, tensors, action)
            outputs = {}
            for i, node in enumerate(tensors.graph.nodes):
                relationship = RELATIONSHIPS[int(np.argmax(probs[i]))]
                sentences: Dict[str, str] = {}
                if relationship.is_exception:
                    for kind in SENTENCE_TASKS:
                        decoder_net = self.bundle.decoder_network(action, kind)
                        if decoder_net is None:
                            continue
                        if id(decoder_net) not in outputs:
                            dec_tensors = self._tensors(decoder_net, scene, cache)
                            outputs[id(decoder_net)] = decoder_net.trunk_forward(dec_tensors.inputs, action).output
                        tokens = generate_tokens(
                            decoder_net.decoders[(action, kind)],
                            self.bundle.vocab(action),
                            outputs[id(decoder_net)][i],
                            decoder_net.config.max_sentence_len,
                        )
                        sentences[kind] = " ".join(tokens)
                out.append(
                    InstancePrediction(
                        action=action,
                        instance_id=node.instance_id,
                        class_name=self.class_names[node.class_id] if node.class_id < len(self.class_names) else str(node.class_id),
                        bbox=node.bbox.as_list(),
                        context_box=node.context_box.as_list(),
                        relationship=relationship,
                        probabilities={r.value: float(p) for r, p in zip(RELATIONSHIPS, probs[i])},
                        **sentences,
                    )
                )
        logger.info("scene %s: %d predictions", scene.scene_id, len(out))
        return out


def predict(checkpoints: Sequence[Path | str], scene: LoadedScene) -> List[InstancePrediction]:
    return Predictor.load(checkpoints).predict(scene)
