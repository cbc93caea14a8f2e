"""
TRAINER - TEACHING THE NETWORK FROM LABELED SCENES
==================================================
One "unit" is one network trained to its best validation epoch:

- independent: one unit per (action, task), nothing shared between tasks
- SA-MT / MA-MT: see app/harness/multitask.py, same loop

Each epoch walks over all training samples in a seeded shuffle. A
relationship batch is a set of labeled (scene, node, action) samples; the
scenes they come from are packed into one graph, the trunk runs once per
action and every task head reads the rows it needs. Gradients flow back
through the heads, the T propagation steps and the node initialization
(BPTT), get clipped per component and feed Adam.

Think of it like:
- epoch = one pass over every labeled object of the training split
- after each epoch the val split decides whether this is the best model so far
- a NaN or Inf aborts the run; the last good weights are kept on disk
"""

from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from app.dataset.scenes import Dataset, load_dataset
from app.decoder.vocab import Vocabulary
from app.errors import ConfigurationError, TrainingDivergenceError
from app.events import EventLog
from app.harness.evaluate import data_version, gather_relationships, relationship_probabilities
from app.harness.network import AffordanceNetwork, dims_for
from app.harness.samples import (
    NodeSample,
    SceneTensors,
    load_split_tensors,
    pack_scenes,
    relationship_samples,
    sentence_samples,
)
from app.metrics.relationship import score_action
from app.models import NUM_RELATIONSHIPS, SENTENCE_TASKS, AdamConfig, RunConfig
from app.numeric.optim import adam_step, clip_global_norm
from app.numeric.tensor import set_precision

logger = logging.getLogger("trainer")

ALL_TASKS = ["relationship", "explanation", "consequence"]


@dataclass
class TrainingUnit:
    name: str
    actions: List[str]
    tasks: List[str]


@dataclass
class FitResult:
    name: str
    checkpoint: Path
    best_epoch: int
    best_score: float
    network: AffordanceNetwork


@dataclass
class TrainResult:
    config: RunConfig
    out_dir: Path
    fits: List[FitResult] = field(default_factory=list)
    events: List[Dict] = field(default_factory=list)

    @property
    def checkpoints(self) -> List[Path]:
        return [f.checkpoint for f in self.fits]

    @property
    def best_epochs(self) -> Dict[str, int]:
        return {f.name: f.best_epoch for f in self.fits}


@dataclass
class ParamGroup:
    """Parameters clipped together and stepped with one Adam schedule."""
    prefixes: Tuple[str, ...]
    clip: Optional[float]
    adam: AdamConfig


def class_weights(scenes: Sequence[SceneTensors], action: str) -> np.ndarray:
    """Inverse-frequency weight per relationship, averaging 1 over the labeled training nodes."""
    labels = np.concatenate([s.labels[action][0][s.labels[action][0] >= 0] for s in scenes])
    counts = np.bincount(labels, minlength=NUM_RELATIONSHIPS).astype(np.float64)
    present = np.count_nonzero(counts)
    weights = np.zeros(NUM_RELATIONSHIPS)
    weights[counts > 0] = labels.size / (present * counts[counts > 0])
    return weights


class Trainer:
    def __init__(
        self,
        network: AffordanceNetwork,
        name: str,
        train_scenes: List[SceneTensors],
        val_scenes: List[SceneTensors],
        log: EventLog,
        checkpoint_dir: Path,
        vocabs: Optional[Dict[str, Vocabulary]] = None,
        extra_meta: Optional[Dict] = None,
    ) -> None:
        self.network = network
        self.config = network.config
        self.name = name
        self.train_scenes = train_scenes
        self.val_scenes = val_scenes
        self.log = log
        self.checkpoint_path = Path(checkpoint_dir) / f"{name}.npz"
        self.vocabs = vocabs or {}
        self.extra_meta = extra_meta or {}

        self.kinds = [k for k in SENTENCE_TASKS if k in network.tasks]
        self.relationship = "relationship" in network.tasks
        self.weights = {t: (self.config.task_weights.get(t, 1.0) if self.config.task == "multitask" else 1.0) for t in ALL_TASKS}
        if self.relationship:
            self.samples = relationship_samples(train_scenes, network.actions)
            self.batch_size = self.config.relationship_batch_size
        else:
            self.samples = sentence_samples(train_scenes, network.actions, self.kinds[0])
            self.batch_size = self.config.decoder_batch_size
        if not self.samples:
            raise ConfigurationError(f"{name}: the training split holds no samples for {network.tasks}")
        self.class_weights = (
            {a: class_weights(train_scenes, a) for a in network.actions}
            if self.relationship and self.config.class_weighting else {}
        )
        self.groups = self._param_groups()

    # ---- optimizer groups -------------------------------------------------

    def _param_groups(self) -> List[ParamGroup]:
        config = self.config
        net = self.network
        trunks = tuple(sorted({net.trunk_prefix(a) + "." for a in net.actions}))
        heads = tuple(f"{a}.relationship." for a in net.heads)
        decoders = tuple(f"{a}.{k}." for (a, k) in net.decoders)
        if not self.relationship:
            return [ParamGroup(trunks + decoders, config.decoder_clip, config.adam_config("decoder"))]
        groups = [ParamGroup(trunks + heads, config.relationship_clip, config.adam_config("relationship"))]
        if decoders:
            groups.append(ParamGroup(decoders, config.decoder_clip, config.adam_config("decoder")))
        return groups

    def _step(self, epoch: int) -> None:
        store = self.network.store
        for group in self.groups:
            clip_global_norm(store, group.clip, group.prefixes)
            adam_step(store, group.adam, epoch, group.prefixes)

    # ---- one batch ----------------------------------------------------------

    def _batch(self, batch: Sequence[NodeSample]) -> Dict[str, float]:
        """Forward + backward of one batch; returns the per-task mean losses."""
        by_action: Dict[str, List[NodeSample]] = defaultdict(list)
        for sample in batch:
            by_action[sample.action].append(sample)

        sentence_counts = {
            kind: sum(1 for s in batch if s.node in self.train_scenes[s.scene].sentences.get((s.action, kind), {}))
            for kind in self.kinds
        }
        losses: Dict[str, float] = defaultdict(float)
        for action in self.network.actions:
            samples = by_action.get(action)
            if not samples:
                continue
            packed = pack_scenes(self.train_scenes, [s.scene for s in samples])
            tpass = self.network.trunk_forward(packed.inputs, action)
            d_output = np.zeros_like(tpass.output)

            if self.relationship and self.weights["relationship"] > 0:
                rows = np.array([packed.row(s) for s in samples])
                targets = np.array([self.train_scenes[s.scene].labels[action][0, s.node] for s in samples])
                row_weights = self.class_weights[action][targets].astype(tpass.output.dtype) if self.class_weights else None
                head = self.network.heads[action]
                loss_sum, _, dlogits, cache = head.loss(tpass.output[rows], targets, row_weights)
                self._check_finite(loss_sum, "relationship")
                scale = self.weights["relationship"] / len(batch)
                np.add.at(d_output, rows, head.backward(dlogits * scale, cache))
                losses["relationship"] += loss_sum / len(batch)

            for kind in self.kinds:
                if self.weights[kind] == 0 or sentence_counts[kind] == 0:
                    continue
                found = [(packed.row(s), self.train_scenes[s.scene].sentences[(action, kind)].get(s.node)) for s in samples]
                found = [(row, sentence) for row, sentence in found if sentence is not None]
                if not found:
                    continue
                rows = np.array([row for row, _ in found])
                decoder = self.network.decoders[(action, kind)]
                loss_sum, cache = decoder.batch_loss(tpass.output[rows], [sentence for _, sentence in found])
                self._check_finite(loss_sum, kind)
                np.add.at(d_output, rows, decoder.backward(cache, scale=self.weights[kind] / sentence_counts[kind]))
                losses[kind] += loss_sum / sentence_counts[kind]

            self.network.trunk_backward(tpass, action, d_output)
        return dict(losses)

    @staticmethod
    def _check_finite(value: float, task: str) -> None:
        if not np.isfinite(value):
            raise TrainingDivergenceError(f"{task} loss became {value}")

    # ---- epochs -------------------------------------------------------------

    def train_epoch(self, epoch: int, rng: np.random.Generator) -> Dict[str, float]:
        order = rng.permutation(len(self.samples))
        totals: Dict[str, float] = defaultdict(float)
        batches = 0
        for start in range(0, len(order), self.batch_size):
            batch = [self.samples[i] for i in order[start:start + self.batch_size]]
            for task, value in self._batch(batch).items():
                totals[task] += value
            self._step(epoch)
            batches += 1
        return {task: value / batches for task, value in totals.items()}

    def _predict(self, scene: SceneTensors, action: str) -> np.ndarray:
        return np.argmax(relationship_probabilities(self.network, scene, action), axis=1)

    def token_loss(self, scenes: Sequence[SceneTensors], action: str, kind: str) -> Optional[float]:
        """Mean per-sentence token cross-entropy over the primary sentences of ``scenes``."""
        decoder = self.network.decoders[(action, kind)]
        total, count = 0.0, 0
        for scene in scenes:
            sentences = scene.sentences.get((action, kind), {})
            if not sentences:
                continue
            nodes = sorted(sentences)
            outputs = self.network.trunk_forward(scene.inputs, action).output
            loss_sum, _ = decoder.batch_loss(outputs[nodes], [sentences[n] for n in nodes])
            total += loss_sum
            count += len(nodes)
        return total / count if count else None

    def validate(self, epoch: int) -> float:
        """Selection score on the val split (higher is better)."""
        metric = self.config.selection_metric
        scores: List[float] = []
        for action in self.network.heads:
            preds, gts = gather_relationships(self.val_scenes, action, self._predict)
            if not preds:
                logger.warning("%s: val split has no labeled %s instances", self.name, action)
                continue
            result = score_action(preds, gts)
            self.log.emit(epoch, "val", "macc", result.macc, model=self.name, action=action)
            self.log.emit(epoch, "val", "macc_e", result.macc_e, model=self.name, action=action)
            scores.append(getattr(result, metric))
        token_losses: List[float] = []
        for (action, kind) in self.network.decoders:
            value = self.token_loss(self.val_scenes, action, kind)
            if value is not None:
                self.log.emit(epoch, "val", "token_loss", value, model=self.name, action=action, task=kind)
                token_losses.append(value)
        if scores:
            return float(np.mean(scores))
        if token_losses:
            return -float(np.mean(token_losses))
        raise ConfigurationError(f"{self.name}: nothing to validate on the val split")

    def _save(self, path: Path, epoch: int, score: float) -> Path:
        vocabularies = {a: v.tokens for a, v in self.vocabs.items() if a in self.network.actions}
        return self.network.save(path, epoch=epoch, val_score=score, name=self.name, vocabularies=vocabularies, **self.extra_meta)

    def fit(self) -> FitResult:
        """
        Train for the configured epochs, keeping the checkpoint of the best
        validation epoch. Ties keep the earlier epoch. On divergence the
        weights and Adam state of the last completed epoch are written to
        ``<name>.last_good.npz`` before the error propagates.
        """
        rng = np.random.default_rng(self.config.seed)
        best_epoch, best_score = 0, -np.inf
        logger.info("training %s on %d samples for %d epochs", self.name, len(self.samples), self.config.epochs)
        for epoch in tqdm(range(1, self.config.epochs + 1), desc=self.name, disable=None):
            snapshot = self.network.store.snapshot()
            try:
                losses = self.train_epoch(epoch, rng)
                for task, value in sorted(losses.items()):
                    self.log.emit(epoch, "train", "loss", value, model=self.name, task=task)
                score = self.validate(epoch)
                if not np.isfinite(score):
                    raise TrainingDivergenceError(f"{self.name}: validation score became {score}")
            except TrainingDivergenceError as exc:
                self.network.store.restore(snapshot)
                last_good = self.checkpoint_path.with_name(f"{self.name}.last_good.npz")
                self._save(last_good, epoch - 1, best_score if best_epoch else float("nan"))
                logger.error("%s diverged in epoch %d (%s); weights and optimizer state of epoch %d kept in %s", self.name, epoch, exc, epoch - 1, last_good)
                raise
            if score > best_score:
                best_epoch, best_score = epoch, score
                self._save(self.checkpoint_path, epoch, score)
        self.log.emit(best_epoch, "val", "best_score", best_score, model=self.name)
        logger.info("%s: best val %s %.4f at epoch %d", self.name, self.config.selection_metric, best_score, best_epoch)
        return FitResult(name=self.name, checkpoint=self.checkpoint_path, best_epoch=best_epoch, best_score=float(best_score), network=self.network)


# ===========================
# RUNS
# ===========================

def independent_units(config: RunConfig) -> List[TrainingUnit]:
    return [TrainingUnit(name=f"{a}-{config.task}", actions=[a], tasks=[config.task]) for a in config.actions]


def run_units(config: RunConfig, units: Sequence[TrainingUnit], dataset: Optional[Dataset] = None) -> TrainResult:
    """Train every unit in order on the same data and event log."""
    set_precision(config.precision)
    dataset = dataset or load_dataset(config.data_dir)
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.json").write_text(config.model_dump_json(indent=2) + "\n")
    log = EventLog(out_dir / "events.jsonl")

    needs_sentences = any(t in SENTENCE_TASKS for u in units for t in u.tasks)
    vocabs = {a: dataset.vocab(a) for a in config.actions} if needs_sentences else {}
    train_scenes = load_split_tensors(dataset, "train", config, vocabs)
    val_scenes = load_split_tensors(dataset, "val", config, vocabs)
    manifest = dataset.manifest
    meta = {"data_version": data_version(dataset), "class_names": manifest.classes}

    result = TrainResult(config=config, out_dir=out_dir)
    for unit in units:
        dims = dims_for(config, len(manifest.classes), manifest.feature_dim, manifest.global_dim, unit.actions)
        init_rng = np.random.default_rng([config.seed, 1])
        network = AffordanceNetwork.create(
            config, dims, unit.actions, unit.tasks, {a: len(v) for a, v in vocabs.items()}, init_rng
        )
        trainer = Trainer(network, unit.name, train_scenes, val_scenes, log, out_dir / "checkpoints", vocabs, meta)
        result.fits.append(trainer.fit())
    result.events = log.events
    return result


def train(config: RunConfig, dataset: Optional[Dataset] = None) -> TrainResult:
    """Independent models: one checkpoint per action for the configured task."""
    if config.regime != "independent":
        raise ConfigurationError(f"regime {config.regime} is trained by train_multitask")
    return run_units(config, independent_units(config), dataset)
