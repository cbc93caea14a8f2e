"""
SYNTHETIC SCENES - A WORLD WHERE CONTEXT DECIDES THE LABEL
==========================================================
Generates complete datasets (maps, features, annotations, KB, rules,
vocabularies, splits) whose exception labels depend only on which objects
touch which. Object features are class mean + noise and never encode
neighbors, so a model without message passing cannot beat a ceiling that
is computable from the generator settings.

Think of it like:
- The image is a grid of cells; each cell holds a small group of objects
  (a chair with or without a person on it, a cup with or without a hand
  on it, a cup on a table someone is using, ...)
- "room": a wall strip on top and a floor under everything, so the floor
  touches every object; a fire somewhere makes the floor Dangerous
- "radius2": cells are separated by unlabeled pixels; a cup on a table
  whose other side touches a person is two hops from that person
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from app.db import get_store
from app.dataset.features import FeatureTable
from app.dataset.scenes import Dataset, LoadedScene, save_manifest, save_scene, save_splits
from app.dataset.split import stratified_split
from app.decoder.vocab import RESERVED, Vocabulary, build_vocab, save_vocab, tokenize
from app.errors import ConfigurationError
from app.knowledge_base.kb import AffordanceKB, kb_from_names, kb_predict, save_kb
from app.models import (
    ACTIONS,
    AffordanceRule,
    AnnotatorEntry,
    DatasetManifest,
    InstanceAnnotation,
    Relationship,
    SceneRecord,
    SplitSpec,
    SynthConfig,
)
from app.rule_engine.engine import save_rules
from app.scene_graph.instance_map import InstanceMap

logger = logging.getLogger("synth")

CLASS_NAMES: List[str] = ["floor", "wall", "chair", "sofa", "person", "fire", "bottle", "cup", "table"]

KB_ENTRIES: Dict[str, List[str]] = {
    "sit": ["chair", "sofa", "floor"],
    "run": ["floor"],
    "grasp": ["bottle", "cup"],
}

DEFAULT_GROUP_WEIGHTS: Dict[str, Dict[str, float]] = {
    "room": {"empty": 0.15, "seat": 0.4, "person": 0.1, "item": 0.35},
    "radius2": {"empty": 0.1, "seat": 0.25, "item": 0.25, "table_item": 0.4},
}

# ===========================
# RULES + SENTENCE TEMPLATES
# ===========================

_OCCUPIED = AffordanceRule(
    type="adjacent_to", action="sit", targets=["chair", "sofa"], triggers=["person"],
    label=Relationship.PHYSICAL_OBSTACLE,
    explanations=[
        "the {target} is occupied by a {trigger}",
        "a {trigger} is already sitting on the {target}",
        "someone is using the {target} right now",
    ],
    consequences=[
        "you would sit on the {trigger}",
        "the {trigger} would be squashed",
        "you would bump into the {trigger}",
    ],
)
_HOT_SEAT = AffordanceRule(
    type="adjacent_to", action="sit", targets=["floor"], triggers=["fire"],
    label=Relationship.DANGEROUS,
    explanations=[
        "there is a {trigger} on the {target}",
        "the {target} is next to a {trigger}",
        "a {trigger} is burning on the {target}",
    ],
    consequences=[
        "you would get burned",
        "your clothes would catch {trigger}",
        "you would be hurt by the {trigger}",
    ],
)
_HOT_RUN = AffordanceRule(
    type="adjacent_to", action="run", targets=["floor"], triggers=["fire"],
    label=Relationship.DANGEROUS,
    explanations=[
        "there is a {trigger} on the {target}",
        "the {target} is next to a {trigger}",
        "a {trigger} is burning on the {target}",
    ],
    consequences=[
        "you would run into the {trigger}",
        "you would get burned",
        "you would be hurt by the {trigger}",
    ],
)
_HELD = AffordanceRule(
    type="adjacent_to", action="grasp", targets=["bottle", "cup"], triggers=["person"],
    label=Relationship.SOCIALLY_FORBIDDEN,
    explanations=[
        "the {target} is held by a {trigger}",
        "a {trigger} is holding the {target}",
        "the {target} belongs to the {trigger}",
    ],
    consequences=[
        "the {trigger} would be upset",
        "you would take the {target} from the {trigger}",
        "the {trigger} would get angry",
    ],
)
_IN_USE = AffordanceRule(
    type="two_hops_from", action="grasp", targets=["cup", "bottle"], triggers=["person"],
    label=Relationship.SOCIALLY_AWKWARD,
    explanations=[
        "the {target} on the table is used by a {trigger}",
        "a {trigger} is drinking from the {target}",
        "the {target} is in front of a {trigger}",
    ],
    consequences=[
        "the {trigger} would feel awkward",
        "the {trigger} would miss the {target}",
        "the {trigger} would be annoyed",
    ],
)

RULES: Dict[str, List[AffordanceRule]] = {
    "room": [_OCCUPIED, _HOT_SEAT, _HOT_RUN, _HELD],
    "radius2": [_OCCUPIED, _HELD, _IN_USE],
}


def rules_for(layout: str) -> List[AffordanceRule]:
    return list(RULES[layout])


def default_kb() -> AffordanceKB:
    return kb_from_names(KB_ENTRIES, CLASS_NAMES)


# ===========================
# SCENE LAYOUT
# ===========================

@dataclass
class _Placed:
    """An object drawn by the generator plus the rule (if any) it fires by construction."""
    instance_id: int
    class_name: str
    fired: Dict[str, Tuple[AffordanceRule, str]] = field(default_factory=dict)  # action -> (rule, trigger class)


class _Canvas:
    def __init__(self, height: int, width: int) -> None:
        self.pixels = np.zeros((height, width), dtype=np.int64)
        self.objects: List[_Placed] = []

    def add(self, class_name: str, rows: slice, cols: slice) -> _Placed:
        obj = _Placed(instance_id=len(self.objects) + 1, class_name=class_name)
        self.pixels[rows, cols] = obj.instance_id
        self.objects.append(obj)
        return obj


def _cells(config: SynthConfig) -> List[Tuple[int, int]]:
    top = config.wall_rows if config.layout == "room" else 0
    rows = (config.height - top) // config.cell_size
    cols = config.width // config.cell_size
    return [(top + r * config.cell_size, c * config.cell_size) for r in range(rows) for c in range(cols)]


def _group_weights(config: SynthConfig) -> Dict[str, float]:
    weights = dict(config.group_weights or DEFAULT_GROUP_WEIGHTS[config.layout])
    allowed = set(DEFAULT_GROUP_WEIGHTS[config.layout])
    bad = sorted(set(weights) - allowed)
    if bad:
        raise ConfigurationError(f"layout {config.layout} has no cell groups {bad}; choose from {sorted(allowed)}")
    total = sum(weights.values())
    if total <= 0:
        raise ConfigurationError("group weights must have a positive sum")
    return {k: v / total for k, v in sorted(weights.items())}


def _check_config(config: SynthConfig) -> None:
    if config.cell_size < 6 and "table_item" in _group_weights(config):
        raise ConfigurationError("cup-table-person cells need cell_size >= 6")
    if not _cells(config):
        raise ConfigurationError(
            f"a {config.height}x{config.width} image with cell size {config.cell_size} has no cell to place objects in"
        )
    if config.layout == "room" and len(_cells(config)) < 2:
        raise ConfigurationError("room layout needs at least two cells (one is reserved for the free-standing person)")
    if config.global_presence and config.global_dim < len(CLASS_NAMES):
        raise ConfigurationError(f"class-presence global feature needs global_dim >= {len(CLASS_NAMES)}")


def _draw_cell(canvas: _Canvas, group: str, top: int, left: int, cs: int, config: SynthConfig, rng: np.random.Generator) -> None:
    inner_r = slice(top + 1, top + cs - 1)
    width = cs - 2
    half = width // 2
    left_cols = slice(left + 1, left + 1 + half)
    right_cols = slice(left + 1 + half, left + cs - 1)
    if group == "empty":
        return
    if group == "person":
        canvas.add("person", inner_r, slice(left + 1, left + cs - 1))
        return
    if group == "seat":
        seat = canvas.add(str(rng.choice(["chair", "sofa"])), inner_r, left_cols)
        if rng.random() < config.p_occupied:
            canvas.add("person", inner_r, right_cols)
            seat.fired["sit"] = (_OCCUPIED, "person")
        return
    if group == "item":
        item = canvas.add(str(rng.choice(["bottle", "cup"])), inner_r, left_cols)
        if rng.random() < config.p_held:
            canvas.add("person", inner_r, right_cols)
            item.fired["grasp"] = (_HELD, "person")
        return
    if group == "table_item":
        third = width // 3
        c0 = left + 1
        cup = canvas.add("cup", inner_r, slice(c0, c0 + third))
        canvas.add("table", inner_r, slice(c0 + third, c0 + 2 * third))
        if rng.random() < config.p_two_hop:
            canvas.add("person", inner_r, slice(c0 + 2 * third, left + cs - 1))
            cup.fired["grasp"] = (_IN_USE, "person")
        return
    if group == "fire":
        canvas.add("fire", inner_r, slice(left + 1, left + cs - 1))
        return
    raise ConfigurationError(f"unknown cell group {group!r}")


def _layout_scene(config: SynthConfig, rng: np.random.Generator) -> _Canvas:
    canvas = _Canvas(config.height, config.width)
    cells = _cells(config)
    order = [int(i) for i in rng.permutation(len(cells))]
    weights = _group_weights(config)
    names, probs = list(weights), np.array(list(weights.values()))

    floor: Optional[_Placed] = None
    if config.layout == "room":
        canvas.add("wall", slice(0, config.wall_rows), slice(0, config.width))
        floor = canvas.add("floor", slice(config.wall_rows, config.height), slice(0, config.width))
        # objects drawn later overwrite the floor inside their cells
        groups = ["person"]
        if rng.random() < config.p_hazard:
            groups.append("fire")
        groups += [str(rng.choice(names, p=probs)) for _ in range(len(cells) - len(groups))]
    else:
        groups = [str(rng.choice(names, p=probs)) for _ in range(len(cells))]

    for group, k in zip(groups, order):
        top, left = cells[k]
        _draw_cell(canvas, group, top, left, config.cell_size, config, rng)

    if floor is not None and any(o.class_name == "fire" for o in canvas.objects):
        floor.fired["sit"] = (_HOT_SEAT, "fire")
        floor.fired["run"] = (_HOT_RUN, "fire")
    return canvas


# ===========================
# FEATURES + ANNOTATIONS
# ===========================

def class_means(config: SynthConfig) -> np.ndarray:
    """Per-class mean appearance vectors (fixed by the generator seed)."""
    return np.random.default_rng([config.seed, 0]).normal(size=(len(CLASS_NAMES), config.feature_dim))


def _features(canvas: _Canvas, config: SynthConfig, means: np.ndarray, rng: np.random.Generator) -> FeatureTable:
    lookup = {n: i for i, n in enumerate(CLASS_NAMES)}
    objects = {
        o.instance_id: means[lookup[o.class_name]] + config.feature_noise * rng.normal(size=config.feature_dim)
        for o in canvas.objects
    }
    global_feature = config.global_noise * rng.normal(size=config.global_dim)
    if config.global_presence:
        for o in canvas.objects:
            global_feature[lookup[o.class_name]] = 1.0 + config.global_noise * rng.normal()
    return FeatureTable(
        object_features={k: v.astype(np.float32) for k, v in objects.items()},
        global_feature=global_feature.astype(np.float32),
    )


def _sentence(template: str, target: str, trigger: str) -> str:
    return template.format(target=target, trigger=trigger)


def _annotations(canvas: _Canvas, kb: AffordanceKB, config: SynthConfig, rng: np.random.Generator):
    lookup = {n: i for i, n in enumerate(CLASS_NAMES)}
    out: Dict[str, Dict[str, InstanceAnnotation]] = {}
    for action in ACTIONS:
        entries: Dict[str, InstanceAnnotation] = {}
        for obj in canvas.objects:
            fired = obj.fired.get(action)
            if fired is None:
                label = kb_predict(kb, action, lookup[obj.class_name])
                extra = [AnnotatorEntry(label=label) for _ in range(config.annotators - 1)]
                entries[str(obj.instance_id)] = InstanceAnnotation(label=label, extra=extra)
                continue
            rule, trigger = fired
            extra = []
            for _ in range(config.annotators - 1):
                ve, vc = int(rng.integers(1, len(rule.explanations))), int(rng.integers(1, len(rule.consequences)))
                extra.append(AnnotatorEntry(
                    label=rule.label,
                    explanation=_sentence(rule.explanations[ve], obj.class_name, trigger),
                    consequence=_sentence(rule.consequences[vc], obj.class_name, trigger),
                ))
            entries[str(obj.instance_id)] = InstanceAnnotation(
                label=rule.label,
                explanation=_sentence(rule.explanations[0], obj.class_name, trigger),
                consequence=_sentence(rule.consequences[0], obj.class_name, trigger),
                extra=extra,
            )
        out[action] = entries
    return out


def generate_scene(config: SynthConfig, index: int, kb: AffordanceKB, means: np.ndarray) -> LoadedScene:
    rng = np.random.default_rng([config.seed, 1, index])
    canvas = _layout_scene(config, rng)
    lookup = {n: i for i, n in enumerate(CLASS_NAMES)}
    scene_id = f"scene_{index:05d}"
    imap = InstanceMap(
        pixel_instance=canvas.pixels,
        instance_class={o.instance_id: lookup[o.class_name] for o in canvas.objects},
    )
    record = SceneRecord(
        scene_id=scene_id,
        instance_map=f"maps/{scene_id}.pgm",
        features=f"feats/{scene_id}.bin",
        annotations=_annotations(canvas, kb, config, rng),
    )
    return LoadedScene(record=record, instance_map=imap, features=_features(canvas, config, means, rng))


# ===========================
# WHOLE DATASET
# ===========================

def default_split_sizes(num_scenes: int) -> Dict[str, int]:
    val = max(1, num_scenes // 10) if num_scenes >= 3 else 0
    test = val
    return {"train": num_scenes - val - test, "val": val, "test": test}


def write_vocabularies(dataset: Dataset, scene_ids: Sequence[str], min_freq: int = 2) -> Dict[str, int]:
    """Build one vocabulary per action from the sentences of ``scene_ids`` (all annotators)."""
    sizes: Dict[str, int] = {}
    for action in dataset.manifest.actions:
        corpus: List[str] = []
        for scene in dataset.scenes(list(scene_ids)):
            for ann in scene.record.labeled_instances(action).values():
                for k in range(ann.num_annotators):
                    entry = ann.annotator(k)
                    corpus.extend(s for s in (entry.explanation, entry.consequence) if s)
        if corpus:
            vocab = build_vocab(corpus, min_freq=min_freq)
        else:
            logger.warning("action %s has no sentences in the selected scenes; vocabulary holds reserved tokens only", action)
            vocab = Vocabulary(RESERVED)
        save_vocab(dataset.store.vocab_path(action), vocab)
        sizes[action] = len(vocab)
    dataset.reset_cache()
    return sizes


def synth_generate(
    config: SynthConfig,
    out_dir: Path | str,
    split_sizes: Optional[Dict[str, int]] = None,
    min_token_freq: int = 2,
    progress: bool = False,
) -> Dataset:
    """Write a complete synthetic dataset to ``out_dir`` and return it opened."""
    _check_config(config)
    store = get_store(out_dir)
    store.root.mkdir(parents=True, exist_ok=True)
    kb = default_kb()
    means = class_means(config)

    ids: List[str] = []
    for index in tqdm(range(config.num_scenes), desc="gen-data", disable=not progress):
        scene = generate_scene(config, index, kb, means)
        save_scene(store.root, scene)
        ids.append(scene.scene_id)

    manifest = DatasetManifest(
        classes=CLASS_NAMES,
        feature_dim=config.feature_dim,
        global_dim=config.global_dim,
        scene_ids=ids,
        generator=config.model_dump(),
    )
    save_manifest(store, manifest)
    save_kb(kb, store.kb_path)
    save_rules(rules_for(config.layout), store.rules_path)

    dataset = Dataset(store)
    splits = stratified_split([dataset.scene(i).record for i in ids], split_sizes or default_split_sizes(len(ids)), seed=config.seed)
    save_splits(store, splits)
    write_vocabularies(dataset, splits.train or ids, min_freq=min_token_freq)
    logger.info("generated %d %s scenes under %s", len(ids), config.layout, store.root)
    return dataset


# ===========================
# CONTEXT-FREE CEILING
# ===========================

def _expected_label_counts(config: SynthConfig, action: str) -> Dict[str, Dict[str, float]]:
    """Expected per-scene count of each (target class, label) for the rules of ``action``."""
    weights = _group_weights(config)
    cells = len(_cells(config))
    free_cells = cells - 1 - config.p_hazard if config.layout == "room" else cells
    per_cell = {g: free_cells * w for g, w in weights.items()}
    counts: Dict[str, Dict[str, float]] = {}

    def add(cls: str, label: str, value: float) -> None:
        counts.setdefault(cls, {}).setdefault(label, 0.0)
        counts[cls][label] += value

    positive = Relationship.POSITIVE.value
    if action == "sit":
        for cls in ("chair", "sofa"):
            n = per_cell.get("seat", 0.0) / 2
            add(cls, Relationship.PHYSICAL_OBSTACLE.value, n * config.p_occupied)
            add(cls, positive, n * (1 - config.p_occupied))
    if action in ("sit", "run") and config.layout == "room":
        add("floor", Relationship.DANGEROUS.value, config.p_hazard)
        add("floor", positive, 1 - config.p_hazard)
    if action == "grasp":
        for cls in ("bottle", "cup"):
            n = per_cell.get("item", 0.0) / 2
            add(cls, Relationship.SOCIALLY_FORBIDDEN.value, n * config.p_held)
            add(cls, positive, n * (1 - config.p_held))
        if config.layout == "radius2":
            n = per_cell.get("table_item", 0.0)
            add("cup", Relationship.SOCIALLY_AWKWARD.value, n * config.p_two_hop)
            add("cup", positive, n * (1 - config.p_two_hop))
    return counts


def unary_bayes_ceiling(config: SynthConfig, action: str) -> float:
    """
    Best accuracy a model without message passing can reach on the classes
    the rules of ``action`` can relabel.

    Per class it can only pick the majority label. The one exception is the
    floor of a room scene with the class-presence global feature: whether a
    fire is in the image is visible globally, so the floor label is known.
    """
    counts = _expected_label_counts(config, action)
    if not counts:
        raise ConfigurationError(f"no rule of layout {config.layout} relabels anything for action {action}")
    correct = total = 0.0
    for cls, labels in counts.items():
        mass = sum(labels.values())
        total += mass
        if cls == "floor" and config.global_presence:
            correct += mass
        else:
            correct += max(labels.values())
    return float(correct / total)


def affected_classes(config: SynthConfig, action: str) -> List[str]:
    return sorted(_expected_label_counts(config, action))


# ===========================
# STATISTICS
# ===========================

def dataset_statistics(dataset: Dataset, scene_ids: Optional[Sequence[str]] = None) -> Dict[str, Dict]:
    """Exception frequencies per action and sentence statistics per (action, kind)."""
    ids = list(scene_ids) if scene_ids is not None else dataset.manifest.scene_ids
    kb = dataset.kb
    stats: Dict[str, Dict] = {"actions": {}, "sentences": {}}
    for action in dataset.manifest.actions:
        images_with_exc = objects = kb_objects = kb_exc = exc = 0
        per_class: Dict[str, int] = {}
        sentences: Dict[str, List[List[str]]] = {"explanation": [], "consequence": []}
        for scene in dataset.scenes(ids):
            found = False
            for iid, ann in scene.record.labeled_instances(action).items():
                objects += 1
                in_kb = scene.instance_map.instance_class[iid] in kb.classes_for(action)
                kb_objects += int(in_kb)
                if ann.label.is_exception:
                    found = True
                    exc += 1
                    kb_exc += int(in_kb)
                    per_class[ann.label.value] = per_class.get(ann.label.value, 0) + 1
                for k in range(ann.num_annotators):
                    entry = ann.annotator(k)
                    if entry.explanation:
                        sentences["explanation"].append(tokenize(entry.explanation))
                    if entry.consequence:
                        sentences["consequence"].append(tokenize(entry.consequence))
            images_with_exc += int(found)
        stats["actions"][action] = {
            "images_with_exception": images_with_exc / max(len(ids), 1),
            "exceptions_among_kb_objects": kb_exc / max(kb_objects, 1),
            "exceptions_among_objects": exc / max(objects, 1),
            "exception_distribution": {k: v / max(exc, 1) for k, v in sorted(per_class.items())},
        }
        for kind, toks in sentences.items():
            stats["sentences"][f"{action}/{kind}"] = {
                "sentences": len(toks),
                "vocabulary": len({t for s in toks for t in s}),
                "mean_length": float(np.mean([len(s) for s in toks])) if toks else 0.0,
            }
    return stats


def resplit(dataset: Dataset, sizes: Dict[str, int], seed: int, min_token_freq: int = 2) -> SplitSpec:
    """Draw a new stratified split and rebuild the vocabularies from its train part."""
    splits = stratified_split([s.record for s in dataset.scenes()], sizes, seed=seed)
    save_splits(dataset.store, splits)
    write_vocabularies(dataset, splits.train, min_freq=min_token_freq)
    return splits
