"""
Re-derives ground-truth relationships of a scene from its instance map alone.

Rules are applied per action in file order; the first rule whose target
class matches and whose handler fires decides the label, otherwise the
knowledge-base prior does. Handlers are looked up on ``rule`` by
``AffordanceRule.type`` so new rule types need no change here.
"""

from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Dict, List, Sequence

from pydantic import TypeAdapter, ValidationError

from app.errors import SchemaError
from app.knowledge_base.kb import AffordanceKB, kb_predict
from app.models import AffordanceRule, Relationship
from app.rule_engine import rule as rules_module
from app.scene_graph.graph import SceneGraph, build_spatial_graph
from app.scene_graph.instance_map import InstanceMap

logger = logging.getLogger("rules")

_RULE_LIST = TypeAdapter(List[AffordanceRule])


def load_rules(path: Path | str) -> List[AffordanceRule]:
    path = Path(path)
    try:
        rules = _RULE_LIST.validate_json(path.read_text())
    except ValidationError as exc:
        raise SchemaError(f"{path}: {exc}") from exc
    for r in rules:
        _handler(r)
    return rules


def save_rules(rules: Sequence[AffordanceRule], path: Path | str) -> Path:
    path = Path(path)
    payload = [json.loads(r.model_dump_json(by_alias=True)) for r in rules]
    path.write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n")
    return path


def _handler(rule: AffordanceRule):
    handler = getattr(rules_module, rule.type, None)
    if handler is None or rule.type not in rules_module.RULE_TYPES:
        raise SchemaError(f"unknown rule type {rule.type!r}")
    return handler


def label_node(
    graph: SceneGraph,
    node_index: int,
    action: str,
    rules: Sequence[AffordanceRule],
    kb: AffordanceKB,
    class_names: Sequence[str],
) -> Relationship:
    node = graph.nodes[node_index]
    name = class_names[node.class_id]
    for r in rules:
        if r.action != action or name not in r.targets:
            continue
        if _handler(r)(r, graph, node_index, class_names):
            return r.label
    return kb_predict(kb, action, node.class_id)


def evaluate_scene_labels(
    imap: InstanceMap,
    rules: Sequence[AffordanceRule],
    kb: AffordanceKB,
    class_names: Sequence[str],
    actions: Sequence[str],
    connectivity: int = 4,
) -> Dict[str, Dict[int, Relationship]]:
    """action -> instance id -> label, from the pixels and the rule list only."""
    graph = build_spatial_graph(imap, connectivity=connectivity)
    labels: Dict[str, Dict[int, Relationship]] = {}
    for action in actions:
        labels[action] = {
            node.instance_id: label_node(graph, i, action, rules, kb, class_names)
            for i, node in enumerate(graph.nodes)
        }
    return labels
