"""
SCENES - ONE ANNOTATED IMAGE, CHECKED END TO END
================================================
A scene is three files that must agree with each other:
- scenes/<id>.json   which instance is what for every action (SceneRecord)
- maps/<id>.pgm      which pixel belongs to which instance (InstanceMap)
- feats/<id>.bin     the appearance vector of every instance (FeatureTable)

Think of it like:
- load_scene reads all three and refuses to hand back anything that does
  not line up (a label on a missing instance, a feature row for nobody,
  a sentence on a Positive label, ...)
- Dataset is the whole directory: manifest, KB, splits, vocabularies
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterator, List, Optional

from pydantic import ValidationError

from app.db import DatasetStore, get_store
from app.dataset.features import FeatureTable, load_features, save_features
from app.decoder.vocab import Vocabulary, load_vocab
from app.errors import DataValidationError, DimensionError, IncompleteSceneError, SchemaError
from app.knowledge_base.kb import AffordanceKB, load_kb
from app.models import DatasetManifest, SceneRecord, SplitSpec
from app.scene_graph.instance_map import InstanceMap, load_instance_map, save_instance_map

logger = logging.getLogger("dataset")


@dataclass
class LoadedScene:
    record: SceneRecord
    instance_map: InstanceMap
    features: FeatureTable

    @property
    def scene_id(self) -> str:
        return self.record.scene_id


def _parse(model, path: Path):
    try:
        return model.model_validate_json(path.read_text())
    except ValidationError as exc:
        raise SchemaError(f"{path}: {exc}") from exc


def validate_scene(scene: LoadedScene, manifest: Optional[DatasetManifest] = None) -> None:
    """Cross-check record, map and features; raises DataValidationError subclasses."""
    sid = scene.record.scene_id
    num_classes = len(manifest.classes) if manifest is not None else None
    scene.instance_map.validate(num_classes)
    present = set(scene.instance_map.instance_ids())

    for action, entries in scene.record.annotations.items():
        ghosts = sorted(int(k) for k in entries if int(k) not in present)
        if ghosts:
            raise DataValidationError(f"scene {sid}: action {action} labels instances {ghosts} missing from the instance map")

    featured = set(scene.features.object_features)
    missing = sorted(present - featured)
    if missing:
        raise IncompleteSceneError(f"scene {sid}: no feature vector for instances {missing}")
    extra = sorted(featured - present)
    if extra:
        raise DataValidationError(f"scene {sid}: feature rows for instances {extra} not in the instance map")
    if manifest is not None:
        if scene.features.dim != manifest.feature_dim:
            raise DimensionError(f"scene {sid}: feature dimension {scene.features.dim} != dataset {manifest.feature_dim}")
        if scene.features.global_dim != manifest.global_dim:
            raise DimensionError(f"scene {sid}: global feature dimension {scene.features.global_dim} != dataset {manifest.global_dim}")


def load_scene(path: Path | str, manifest: Optional[DatasetManifest] = None) -> LoadedScene:
    """Load scenes/<id>.json plus the map and feature files it points to (paths relative to the dataset root)."""
    path = Path(path)
    if not path.exists():
        raise DataValidationError(f"scene file not found: {path}")
    record = _parse(SceneRecord, path)
    root = path.parent.parent
    num_classes = len(manifest.classes) if manifest is not None else None
    imap = load_instance_map(root / record.instance_map, num_classes)
    features = load_features(root / record.features)
    scene = LoadedScene(record=record, instance_map=imap, features=features)
    validate_scene(scene, manifest)
    return scene


def save_scene(root: Path | str, scene: LoadedScene) -> Path:
    root = Path(root)
    save_instance_map(root / scene.record.instance_map, scene.instance_map)
    save_features(root / scene.record.features, scene.features)
    path = root / "scenes" / f"{scene.record.scene_id}.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = json.loads(scene.record.model_dump_json(exclude_defaults=False))
    path.write_text(json.dumps(_strip_empty(payload), indent=1, sort_keys=True) + "\n")
    return path


def _strip_empty(payload: dict) -> dict:
    # drop null sentences and empty annotator lists so files stay small
    for entries in payload["annotations"].values():
        for entry in entries.values():
            for key in [k for k, v in entry.items() if v is None or v == []]:
                del entry[key]
            for extra in entry.get("extra", []):
                for key in [k for k, v in extra.items() if v is None]:
                    del extra[key]
    return payload


def save_manifest(store: DatasetStore, manifest: DatasetManifest) -> Path:
    store.root.mkdir(parents=True, exist_ok=True)
    store.manifest_path.write_text(manifest.model_dump_json(indent=1) + "\n")
    return store.manifest_path


def save_splits(store: DatasetStore, splits: SplitSpec) -> Path:
    store.splits_path.write_text(splits.model_dump_json(indent=1) + "\n")
    return store.splits_path


class Dataset:
    """A dataset directory with lazily loaded, cached scenes."""

    def __init__(self, store: DatasetStore) -> None:
        self.store = store
        if not store.manifest_path.exists():
            raise DataValidationError(f"no {store.manifest_path.name} under {store.root}")
        self.manifest: DatasetManifest = _parse(DatasetManifest, store.manifest_path)
        self._scenes: Dict[str, LoadedScene] = {}
        self._kb: Optional[AffordanceKB] = None
        self._splits: Optional[SplitSpec] = None
        self._vocabs: Dict[str, Vocabulary] = {}

    @property
    def root(self) -> Path:
        return self.store.root

    @property
    def class_names(self) -> List[str]:
        return self.manifest.classes

    def scene(self, scene_id: str) -> LoadedScene:
        if scene_id not in self._scenes:
            self._scenes[scene_id] = load_scene(self.store.scene_path(scene_id), self.manifest)
        return self._scenes[scene_id]

    def scenes(self, ids: Optional[List[str]] = None) -> Iterator[LoadedScene]:
        for sid in (ids if ids is not None else self.manifest.scene_ids):
            yield self.scene(sid)

    @property
    def kb(self) -> AffordanceKB:
        if self._kb is None:
            self._kb = load_kb(self.store.kb_path, self.class_names)
        return self._kb

    @property
    def splits(self) -> SplitSpec:
        if self._splits is None:
            if not self.store.splits_path.exists():
                raise DataValidationError(f"no splits.json under {self.root}; run the split command first")
            self._splits = _parse(SplitSpec, self.store.splits_path)
            unknown = sorted(set(self._splits.train + self._splits.val + self._splits.test) - set(self.manifest.scene_ids))
            if unknown:
                raise DataValidationError(f"splits.json names unknown scenes {unknown[:5]}")
        return self._splits

    def split_ids(self, split: str) -> List[str]:
        return self.splits.ids(split)

    def vocab(self, action: str) -> Vocabulary:
        if action not in self._vocabs:
            self._vocabs[action] = load_vocab(self.store.vocab_path(action))
        return self._vocabs[action]

    def reset_cache(self) -> None:
        self._splits = None
        self._vocabs.clear()


def load_dataset(root: Optional[Path | str] = None) -> Dataset:
    return Dataset(get_store(root))
