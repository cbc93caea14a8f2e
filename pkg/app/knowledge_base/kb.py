"""
AFFORDANCE KNOWLEDGE BASE
=========================
A fixed list, per action, of the object classes the action typically
applies to. It never looks at the image.

Think of it like:
- (grasp, bottle) -> Positive, because bottles are on the grasp list
- (sit, fire) -> FirmlyNegative, because fire is not on the sit list
- the KB can never say *why* an object is off limits in this scene, so it
  never predicts an exception

On disk (kb.json): {"sit": ["chair", "floor", ...], "run": [...], "grasp": [...]}
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, FrozenSet, List, Sequence

from app.errors import SchemaError, UnknownClassError
from app.models import ACTIONS, Relationship

logger = logging.getLogger("kb")


@dataclass(frozen=True)
class AffordanceKB:
    class_names: Sequence[str]
    entries: Dict[str, FrozenSet[int]] = field(default_factory=dict)

    def classes_for(self, action: str) -> FrozenSet[int]:
        if action not in ACTIONS:
            raise ValueError(f"unknown action {action!r}; expected one of {ACTIONS}")
        return self.entries.get(action, frozenset())

    def to_json(self) -> Dict[str, List[str]]:
        return {a: sorted(self.class_names[c] for c in self.classes_for(a)) for a in ACTIONS}


def kb_predict(kb: AffordanceKB, action: str, class_id: int) -> Relationship:
    """Positive iff the class is listed for the action, otherwise FirmlyNegative."""
    return Relationship.POSITIVE if int(class_id) in kb.classes_for(action) else Relationship.FIRMLY_NEGATIVE


def kb_from_names(mapping: Dict[str, Sequence[str]], class_names: Sequence[str]) -> AffordanceKB:
    unknown_actions = sorted(set(mapping) - set(ACTIONS))
    if unknown_actions:
        raise SchemaError(f"knowledge base lists unknown actions {unknown_actions}")
    lookup = {name: i for i, name in enumerate(class_names)}
    offenders = sorted({n for names in mapping.values() for n in names if n not in lookup})
    if offenders:
        raise UnknownClassError(f"knowledge base names classes missing from the class table: {offenders}")
    entries = {a: frozenset(lookup[n] for n in mapping.get(a, [])) for a in ACTIONS}
    return AffordanceKB(class_names=list(class_names), entries=entries)


def load_kb(path: Path | str, class_names: Sequence[str]) -> AffordanceKB:
    path = Path(path)
    if not path.exists():
        raise SchemaError(f"knowledge base file not found: {path}")
    raw = json.loads(path.read_text())
    if not isinstance(raw, dict) or not all(isinstance(v, list) for v in raw.values()):
        raise SchemaError(f"{path}: expected an object mapping actions to lists of class names")
    kb = kb_from_names(raw, class_names)
    dupes = {a: len(v) - len(set(v)) for a, v in raw.items() if len(v) != len(set(v))}
    if dupes:
        logger.info("knowledge base %s: dropped duplicate entries %s", path, dupes)
    return kb


def save_kb(kb: AffordanceKB, path: Path | str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(kb.to_json(), indent=2, sort_keys=True) + "\n")
    return path
