"""
RULES - WHEN DOES THE SCENE OVERRULE THE KNOWLEDGE BASE?
========================================================
Each rule type is a function named exactly like ``AffordanceRule.type``.
It answers one question about one node of a scene graph: does a trigger
object sit close enough to this target to fire the rule?

Think of it like:
If a CHAIR touches a PERSON, you cannot sit on it.
If a CUP sits on a table a PERSON is using, grabbing it is awkward.
"""

from typing import Sequence

from app.models import AffordanceRule
from app.scene_graph.graph import SceneGraph, graph_distances

# handler names a rule file may use
RULE_TYPES = ("adjacent_to", "two_hops_from")


def _trigger_indices(rule: AffordanceRule, graph: SceneGraph, class_names: Sequence[str]):
    return [i for i, node in enumerate(graph.nodes) if class_names[node.class_id] in rule.triggers]


def adjacent_to(
    rule: AffordanceRule,
    graph: SceneGraph,
    node_index: int,
    class_names: Sequence[str],
) -> bool:
    """
    RULE: "Is a trigger touching me?"

    EXAMPLE:
    rule: sit / targets [chair, sofa] / triggers [person] -> PhysicalObstacle
    chair touching a person -> True
    chair touching only the floor -> False
    """
    triggers = set(_trigger_indices(rule, graph, class_names))
    neighbors = set(graph.neighbors(node_index))
    return bool(triggers & neighbors)


def two_hops_from(
    rule: AffordanceRule,
    graph: SceneGraph,
    node_index: int,
    class_names: Sequence[str],
) -> bool:
    """
    RULE: "Is a trigger exactly two touches away?"

    EXAMPLE:
    rule: grasp / targets [cup] / triggers [person] -> SociallyAwkward
    cup - table - person -> True
    cup - person -> False (that is distance 1; an adjacency rule handles it)
    """
    distances = graph_distances(graph, node_index)
    return any(distances.get(i) == 2 for i in _trigger_indices(rule, graph, class_names))
