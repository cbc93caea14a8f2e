"""
CAPTION METRICS - HOW CLOSE IS A GENERATED SENTENCE?
====================================================
BLEU-4, ROUGE-L and CIDEr-D on token lists, plus the multi-reference
protocol: score the candidate against each reference on its own, average
over references, then over items.

Think of it like:
- BLEU-4: how many of my 1..4-word chunks also appear in the reference?
- ROUGE-L: how long is the longest in-order word chain we share?
- CIDEr-D: do we share the *rare* chunks (weighted by how few items use them)?

Choices (scores are comparable only within this package):
- BLEU-4 smooths the 2..4-gram precisions with add-one; no unigram match
  gives 0; brevity penalty exp(1 - r/c) when c < r.
- ROUGE-L is the LCS F-measure with beta = 1.2.
- CIDEr-D: document frequencies over the evaluation items' reference sets,
  clipped tf-idf products, Gaussian length penalty with sigma = 6, mean
  over n = 1..4, times 10.
"""

from __future__ import annotations

import logging
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Sequence, Tuple

import numpy as np

logger = logging.getLogger("metrics")

Tokens = Sequence[str]
NGram = Tuple[str, ...]


def ngram_counts(tokens: Tokens, n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


# ===========================
# BLEU-4
# ===========================

def bleu4(candidate: Tokens, reference: Tokens) -> float:
    c, r = len(candidate), len(reference)
    if c == 0:
        return 0.0
    log_precision = 0.0
    for n in range(1, 5):
        cand = ngram_counts(candidate, n)
        ref = ngram_counts(reference, n)
        matches = sum(min(cnt, ref[g]) for g, cnt in cand.items())
        total = max(c - n + 1, 0)
        if n == 1:
            if matches == 0:
                return 0.0
            log_precision += math.log(matches / total)
        else:
            log_precision += math.log((matches + 1) / (total + 1))
    brevity = 1.0 if c >= r else math.exp(1.0 - r / c)
    return float(brevity * math.exp(log_precision / 4.0))


# ===========================
# ROUGE-L
# ===========================

def lcs_length(a: Tokens, b: Tokens) -> int:
    if not a or not b:
        return 0
    table = np.zeros((len(a) + 1, len(b) + 1), dtype=np.int64)
    for i, x in enumerate(a, 1):
        for j, y in enumerate(b, 1):
            table[i, j] = table[i - 1, j - 1] + 1 if x == y else max(table[i - 1, j], table[i, j - 1])
    return int(table[-1, -1])


def rouge_l(candidate: Tokens, reference: Tokens, beta: float = 1.2) -> float:
    if not candidate or not reference:
        return 0.0
    lcs = lcs_length(candidate, reference)
    if lcs == 0:
        return 0.0
    precision = lcs / len(candidate)
    recall = lcs / len(reference)
    return float((1 + beta ** 2) * precision * recall / (recall + beta ** 2 * precision))


# ===========================
# CIDEr-D
# ===========================

@dataclass
class CiderCorpus:
    """Document frequencies of all 1..4-grams over the items' reference sets."""
    document_frequency: Dict[NGram, float] = field(default_factory=lambda: defaultdict(float))
    num_items: int = 0
    n: int = 4
    sigma: float = 6.0

    @classmethod
    def from_references(cls, reference_sets: Sequence[Sequence[Tokens]], n: int = 4, sigma: float = 6.0) -> "CiderCorpus":
        corpus = cls(n=n, sigma=sigma, num_items=len(reference_sets))
        for refs in reference_sets:
            seen = {g for ref in refs for k in range(1, n + 1) for g in ngram_counts(ref, k)}
            for g in seen:
                corpus.document_frequency[g] += 1.0
        if corpus.num_items < 2:
            logger.warning("CIDEr corpus has %d item(s); every idf weight is 0 and scores degenerate", corpus.num_items)
        return corpus

    def _vector(self, tokens: Tokens):
        log_items = math.log(float(max(self.num_items, 1)))
        vec: List[Dict[NGram, float]] = [dict() for _ in range(self.n)]
        norm = [0.0] * self.n
        for k in range(1, self.n + 1):
            for g, tf in ngram_counts(tokens, k).items():
                df = math.log(max(1.0, self.document_frequency.get(g, 0.0)))
                weight = float(tf) * (log_items - df)
                vec[k - 1][g] = weight
                norm[k - 1] += weight * weight
        return vec, [math.sqrt(v) for v in norm]

    def _similarity(self, cand: Tokens, ref: Tokens) -> np.ndarray:
        vec_c, norm_c = self._vector(cand)
        vec_r, norm_r = self._vector(ref)
        delta = float(len(cand) - len(ref))
        penalty = math.exp(-(delta ** 2) / (2 * self.sigma ** 2))
        out = np.zeros(self.n)
        for k in range(self.n):
            val = sum(min(w, vec_r[k].get(g, 0.0)) * vec_r[k].get(g, 0.0) for g, w in vec_c[k].items())
            if norm_c[k] != 0 and norm_r[k] != 0:
                val /= norm_c[k] * norm_r[k]
            out[k] = val * penalty
        return out

    def score(self, candidate: Tokens, references: Sequence[Tokens]) -> float:
        """CIDEr-D of one candidate against its references (averaged over references)."""
        if not references:
            raise ValueError("CIDEr needs at least one reference")
        total = sum(self._similarity(candidate, ref) for ref in references)
        return float(np.mean(total) / len(references) * 10.0)

    def single(self, candidate: Tokens, reference: Tokens) -> float:
        return self.score(candidate, [reference])


def cider(candidate: Tokens, references: Sequence[Tokens], corpus: CiderCorpus) -> float:
    return corpus.score(candidate, references)


# ===========================
# MULTI-REFERENCE PROTOCOL
# ===========================

@dataclass
class CaptionEvalItem:
    candidate: List[str]
    references: List[List[str]]

    def __post_init__(self) -> None:
        if not self.references:
            raise ValueError("a caption item needs at least one reference")


SingleReferenceMetric = Callable[[Tokens, Tokens], float]


def multi_reference_average(metric: SingleReferenceMetric, items: Sequence[CaptionEvalItem]) -> float:
    if not items:
        return 0.0
    per_item = [float(np.mean([metric(it.candidate, ref) for ref in it.references])) for it in items]
    return float(np.mean(per_item))


def caption_scores(items: Sequence[CaptionEvalItem]) -> Dict[str, float]:
    """BLEU-4, ROUGE-L and CIDEr-D under the multi-reference protocol."""
    corpus = CiderCorpus.from_references([it.references for it in items])
    return {
        "bleu4": multi_reference_average(bleu4, items),
        "rouge_l": multi_reference_average(rouge_l, items),
        "cider": multi_reference_average(corpus.single, items),
    }
