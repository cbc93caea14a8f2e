"""
Relationship accuracy with exceptions collapsed (mAcc, 3 classes) or kept
apart (mAcc-E, 7 classes). Both are mean per-class recall over the classes
that occur in the ground truth.
"""

from __future__ import annotations

from typing import Dict, List, Literal, Optional, Sequence

import numpy as np

from app.models import RELATIONSHIPS, ActionScores, Relationship

Mode = Literal["collapsed", "full"]

COLLAPSED_NAMES = ["Positive", "FirmlyNegative", "Exception"]


def _index(label: Relationship | str | int, mode: Mode) -> int:
    if isinstance(label, (int, np.integer)):
        rel = Relationship.from_index(int(label))
    else:
        rel = Relationship(label)
    if mode == "full":
        return rel.index
    return min(rel.index, 2)


def class_names(mode: Mode) -> List[str]:
    return COLLAPSED_NAMES if mode == "collapsed" else [r.value for r in RELATIONSHIPS]


def confusion_matrix(preds: Sequence, gts: Sequence, mode: Mode = "full") -> np.ndarray:
    """K x K counts, rows = ground truth, columns = prediction."""
    if len(preds) != len(gts):
        raise ValueError(f"{len(preds)} predictions for {len(gts)} ground-truth labels")
    k = len(class_names(mode))
    matrix = np.zeros((k, k), dtype=np.int64)
    for p, g in zip(preds, gts):
        matrix[_index(g, mode), _index(p, mode)] += 1
    return matrix


def per_class_recall(matrix: np.ndarray) -> List[Optional[float]]:
    totals = matrix.sum(axis=1)
    return [float(matrix[i, i] / totals[i]) if totals[i] else None for i in range(matrix.shape[0])]


def mean_accuracy(preds: Sequence, gts: Sequence, mode: Mode = "full") -> float:
    if len(gts) == 0:
        raise ValueError("mean accuracy of an empty sample set is undefined")
    recalls = [r for r in per_class_recall(confusion_matrix(preds, gts, mode)) if r is not None]
    return float(np.mean(recalls))


def multi_annotator_accuracy(preds: Sequence, gts_per_annotator: Sequence[Sequence], mode: Mode = "full") -> float:
    """Score against each annotator's labels separately, then average."""
    if not gts_per_annotator:
        raise ValueError("no annotators to score against")
    return float(np.mean([mean_accuracy(preds, gts, mode) for gts in gts_per_annotator]))


def score_action(preds: Sequence, gts_per_annotator: Sequence[Sequence]) -> ActionScores:
    """mAcc, mAcc-E and the 7-way confusion matrix against the first annotator."""
    primary = gts_per_annotator[0]
    matrix = confusion_matrix(preds, primary, "full")
    recalls = per_class_recall(matrix)
    return ActionScores(
        macc=multi_annotator_accuracy(preds, gts_per_annotator, "collapsed"),
        macc_e=multi_annotator_accuracy(preds, gts_per_annotator, "full"),
        confusion=matrix.tolist(),
        per_class_recall={name: r for name, r in zip(class_names("full"), recalls)},
        num_samples=len(primary),
        annotators=len(gts_per_annotator),
    )


def label_counts(labels: Sequence) -> Dict[str, int]:
    counts = np.bincount([_index(l, "full") for l in labels], minlength=len(RELATIONSHIPS))
    return {r.value: int(c) for r, c in zip(RELATIONSHIPS, counts)}
