"""
Stratified train/val/test split balancing exception classes.

Every scene has a profile: how many instances carry each (action,
exception) label. Each split should receive its size-proportional share of
every label. Greedy iterative stratification places scenes rarest label
first; a swap pass then exchanges scenes between splits while that lowers
the squared relative deviation from the targets.
"""

from __future__ import annotations

import logging
from typing import Dict, List, Mapping, Sequence, Tuple

import numpy as np

from app.errors import InfeasibleSplitError
from app.models import ACTIONS, EXCEPTIONS, SceneRecord, SplitSpec

logger = logging.getLogger("dataset")

SPLIT_NAMES = ("train", "val", "test")
LABEL_KEYS: List[Tuple[str, str]] = [(a, e.value) for a in ACTIONS for e in EXCEPTIONS]


def exception_profile(record: SceneRecord) -> np.ndarray:
    """Counts per (action, exception) pair, in LABEL_KEYS order."""
    index = {k: i for i, k in enumerate(LABEL_KEYS)}
    counts = np.zeros(len(LABEL_KEYS))
    for action in record.annotations:
        for ann in record.labeled_instances(action).values():
            if ann.label.is_exception:
                counts[index[(action, ann.label.value)]] += 1
    return counts


def _cost(assigned: np.ndarray, desired: np.ndarray) -> float:
    return float(np.sum((assigned - desired) ** 2 / np.maximum(desired, 1.0)))


def stratified_split(
    profiles: Mapping[str, np.ndarray] | Sequence[SceneRecord],
    sizes: Mapping[str, int],
    seed: int = 0,
    max_rounds: int = 20,
) -> SplitSpec:
    if not isinstance(profiles, Mapping):
        profiles = {r.scene_id: exception_profile(r) for r in profiles}
    ids = sorted(profiles)
    n = len(ids)
    requested = {name: int(sizes.get(name, 0)) for name in SPLIT_NAMES}
    if any(v < 0 for v in requested.values()):
        raise InfeasibleSplitError(f"split sizes must be non-negative, got {requested}")
    if sum(requested.values()) > n:
        raise InfeasibleSplitError(f"split sizes {requested} need {sum(requested.values())} scenes, only {n} available")

    names = list(SPLIT_NAMES) + ["unused"]
    capacity = np.array([requested[s] for s in SPLIT_NAMES] + [n - sum(requested.values())], dtype=np.int64)
    matrix = np.stack([np.asarray(profiles[i], dtype=float) for i in ids]) if n else np.zeros((0, len(LABEL_KEYS)))
    totals = matrix.sum(axis=0)
    desired = np.outer(capacity / max(n, 1), totals)

    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    assignment = np.full(n, -1, dtype=np.int64)
    remaining = capacity.copy()
    need = desired.copy()

    # rarest label first, scenes carrying it go where it is wanted most
    for label in np.argsort(totals, kind="stable"):
        if totals[label] == 0:
            continue
        for k in order:
            if assignment[k] >= 0 or matrix[k, label] == 0:
                continue
            open_splits = np.flatnonzero(remaining > 0)
            best = max(open_splits, key=lambda s: (need[s, label], remaining[s], -s))
            assignment[k] = best
            remaining[best] -= 1
            need[best] -= matrix[k]
    for k in order:
        if assignment[k] < 0:
            best = max(np.flatnonzero(remaining > 0), key=lambda s: (remaining[s], -s))
            assignment[k] = best
            remaining[best] -= 1

    assigned = np.stack([matrix[assignment == s].sum(axis=0) for s in range(len(names))])
    cost = _cost(assigned, desired)
    # swaps only matter between scenes with different profiles, so search over (split, profile) groups
    for _ in range(max_rounds):
        improved = False
        groups: Dict[Tuple[int, Tuple[float, ...]], List[int]] = {}
        for k in order:
            groups.setdefault((int(assignment[k]), tuple(matrix[k])), []).append(int(k))
        keys = sorted(groups)
        for ga in keys:
            for gb in keys:
                sa, sb = ga[0], gb[0]
                if sa >= sb or ga[1] == gb[1] or not groups[ga] or not groups[gb]:
                    continue
                delta = np.asarray(gb[1]) - np.asarray(ga[1])
                trial = assigned.copy()
                trial[sa] += delta
                trial[sb] -= delta
                new_cost = _cost(trial, desired)
                if new_cost < cost - 1e-12:
                    a, b = groups[ga].pop(), groups[gb].pop()
                    assignment[a], assignment[b] = sb, sa
                    assigned, cost = trial, new_cost
                    improved = True
        if not improved:
            break

    buckets: Dict[str, List[str]] = {name: sorted(ids[k] for k in range(n) if assignment[k] == s) for s, name in enumerate(names)}
    logger.info("split seed %d: %s (deviation cost %.3f)", seed, {k: len(v) for k, v in buckets.items()}, cost)
    return SplitSpec(
        train=buckets["train"],
        val=buckets["val"],
        test=buckets["test"],
        unused=buckets["unused"],
        sizes=requested,
        seed=seed,
    )
