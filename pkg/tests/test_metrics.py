import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from app.metrics.captions import (
    CaptionEvalItem,
    CiderCorpus,
    bleu4,
    caption_scores,
    lcs_length,
    multi_reference_average,
    rouge_l,
)
from app.metrics.relationship import confusion_matrix, mean_accuracy, multi_annotator_accuracy, score_action
from app.models import RELATIONSHIPS, Relationship

PAIRS = [
    ("the cat sat on the mat", "the cat is on the mat"),
    ("the chair is occupied by a person", "a person is sitting on the chair"),
    ("you would burn yourself", "you would get burned"),
    ("the stove is hot", "the stove is hot"),
    ("the floor is wet", "someone is mopping the floor"),
    ("it is broken", "the chair is broken and wobbly"),
    ("a a a a a", "a a"),
    ("there is a table in the way", "the table blocks the path"),
    ("you would fall", "the cup is empty"),
    ("the person would be angry with you", "the person is using it"),
]


def oracle_bleu(cand, ref):
    if not cand:
        return 0.0
    logs = []
    for n in range(1, 5):
        cgrams = [tuple(cand[i:i + n]) for i in range(len(cand) - n + 1)]
        rgrams = [tuple(ref[i:i + n]) for i in range(len(ref) - n + 1)]
        used = [False] * len(rgrams)
        matches = 0
        for g in cgrams:
            for j, r in enumerate(rgrams):
                if not used[j] and r == g:
                    used[j] = True
                    matches += 1
                    break
        if n == 1:
            if matches == 0:
                return 0.0
            logs.append(math.log(matches / len(cgrams)))
        else:
            logs.append(math.log((matches + 1) / (len(cgrams) + 1)))
    bp = 1.0 if len(cand) >= len(ref) else math.exp(1 - len(ref) / len(cand))
    return bp * math.exp(sum(logs) / 4)


def is_subsequence(sub, seq):
    it = iter(seq)
    return all(tok in it for tok in sub)


def oracle_lcs(a, b):
    short, long_ = (a, b) if len(a) <= len(b) else (b, a)
    for k in range(len(short), 0, -1):
        if any(is_subsequence(c, long_) for c in itertools.combinations(short, k)):
            return k
    return 0


def oracle_rouge(cand, ref, beta=1.2):
    lcs = oracle_lcs(cand, ref)
    if lcs == 0:
        return 0.0
    p, r = lcs / len(cand), lcs / len(ref)
    return (1 + beta ** 2) * p * r / (r + beta ** 2 * p)


def grams(tokens, n):
    out = {}
    for i in range(len(tokens) - n + 1):
        g = tuple(tokens[i:i + n])
        out[g] = out.get(g, 0) + 1
    return out


def oracle_cider(cand, refs, reference_sets, sigma=6.0):
    num = len(reference_sets)

    def weights(tokens, n):
        w = {}
        for g, tf in grams(tokens, n).items():
            df = sum(1 for rs in reference_sets if any(g in grams(r, n) for r in rs))
            w[g] = tf * (math.log(num) - math.log(max(1, df)))
        return w

    per_ref = []
    for ref in refs:
        sims = []
        for n in range(1, 5):
            wc, wr = weights(cand, n), weights(ref, n)
            num_ = sum(min(v, wr.get(g, 0.0)) * wr.get(g, 0.0) for g, v in wc.items())
            nc = math.sqrt(sum(v * v for v in wc.values()))
            nr = math.sqrt(sum(v * v for v in wr.values()))
            if nc and nr:
                num_ /= nc * nr
            sims.append(num_ * math.exp(-((len(cand) - len(ref)) ** 2) / (2 * sigma ** 2)))
        per_ref.append(10 * sum(sims) / 4)
    return sum(per_ref) / len(refs)


# ---- BLEU / ROUGE / CIDEr against oracles --------------------------------------------

@pytest.mark.parametrize("cand,ref", PAIRS)
def test_bleu_matches_oracle(cand, ref):
    assert bleu4(cand.split(), ref.split()) == pytest.approx(oracle_bleu(cand.split(), ref.split()), abs=1e-9)


@pytest.mark.parametrize("cand,ref", PAIRS)
def test_rouge_matches_oracle(cand, ref):
    c, r = cand.split(), ref.split()
    assert lcs_length(c, r) == oracle_lcs(c, r)
    assert rouge_l(c, r) == pytest.approx(oracle_rouge(c, r), abs=1e-9)


def test_cider_matches_oracle():
    items = [CaptionEvalItem(c.split(), [r.split(), c.split()[::-1]]) for c, r in PAIRS]
    reference_sets = [it.references for it in items]
    corpus = CiderCorpus.from_references(reference_sets)
    for it in items:
        assert corpus.score(it.candidate, it.references) == pytest.approx(
            oracle_cider(it.candidate, it.references, reference_sets), abs=1e-9)


words = st.sampled_from("the a cat sat on mat stove is hot you would fall".split())
sentences = st.lists(words, min_size=1, max_size=8)


@given(cand=st.lists(words, max_size=8), ref=sentences)
@settings(max_examples=80)
def test_generated_sentences_match_the_oracles(cand, ref):
    value = bleu4(cand, ref)
    assert 0.0 <= value <= 1.0 + 1e-12
    assert value == pytest.approx(oracle_bleu(cand, ref), abs=1e-9)
    assert lcs_length(cand, ref) == oracle_lcs(cand, ref)
    score = rouge_l(cand, ref)
    assert 0.0 <= score <= 1.0 + 1e-12
    assert score == pytest.approx(oracle_rouge(cand, ref), abs=1e-9)


@given(items=st.lists(st.tuples(sentences, st.lists(sentences, min_size=1, max_size=3)), min_size=2, max_size=5))
@settings(max_examples=30)
def test_generated_corpora_match_the_cider_oracle(items):
    reference_sets = [refs for _, refs in items]
    corpus = CiderCorpus.from_references(reference_sets)
    for cand, refs in items:
        value = corpus.score(cand, refs)
        assert 0.0 <= value <= 10.0 + 1e-9
        assert value == pytest.approx(oracle_cider(cand, refs, reference_sets), abs=1e-9)


def test_bleu_hand_value():
    value = bleu4("the cat sat on the mat".split(), "the cat is on the mat".split())
    assert value == pytest.approx((5 / 6 * 4 / 6 * 2 / 5 * 1 / 4) ** 0.25, abs=1e-12)


def test_bleu_edges():
    s = "the chair is occupied".split()
    assert bleu4(s, s) == pytest.approx(1.0)
    assert bleu4("x y z".split(), s) == 0.0
    assert bleu4([], s) == 0.0


def test_rouge_edges():
    s = "the chair is occupied".split()
    assert rouge_l(s, s) == pytest.approx(1.0)
    assert rouge_l("x y".split(), s) == 0.0
    assert rouge_l([], s) == 0.0


def test_cider_identical_candidate_scores_the_maximum():
    refs = [["the stove is hot right now".split()], ["a person is sitting there".split()]]
    corpus = CiderCorpus.from_references(refs)
    best = corpus.score(refs[0][0], refs[0])
    assert best == pytest.approx(10.0)
    assert corpus.score("the stove is cold".split(), refs[0]) < best
    assert corpus.score("nothing shared here".split(), refs[0]) == 0.0


def test_cider_stays_finite_with_repeated_ngrams():
    refs = [["you would fall".split()], ["the cup is hot".split()]]
    corpus = CiderCorpus.from_references(refs)
    value = corpus.score("you you would would fall fall".split(), refs[0])
    assert math.isfinite(value) and value >= 0


def test_single_item_corpus_warns(caplog):
    CiderCorpus.from_references([["a b".split()]])
    assert "degenerate" in caplog.text


# ---- multi-reference protocol ---------------------------------------------------------

def test_multi_reference_decomposition():
    c = "the chair is occupied by a person".split()
    other = "someone is sitting on the chair".split()
    item = CaptionEvalItem(c, [c, other])
    assert multi_reference_average(bleu4, [item]) == pytest.approx((1.0 + bleu4(c, other)) / 2)
    single = CaptionEvalItem(c, [other])
    assert multi_reference_average(rouge_l, [single]) == pytest.approx(rouge_l(c, other))
    triple = CaptionEvalItem(c, [other, other, other])
    assert multi_reference_average(bleu4, [triple]) == pytest.approx(bleu4(c, other))


def test_reference_order_does_not_matter():
    c, a, b = ("the stove is hot".split(), "the stove is on".split(), "you would get burned".split())
    forward = caption_scores([CaptionEvalItem(c, [a, b]), CaptionEvalItem(b, [a])])
    backward = caption_scores([CaptionEvalItem(c, [b, a]), CaptionEvalItem(b, [a])])
    assert forward == pytest.approx(backward)


def test_caption_item_needs_a_reference():
    with pytest.raises(ValueError):
        CaptionEvalItem(["a"], [])


# ---- relationship accuracy --------------------------------------------------------------

P, F, O, PH, SA, SF, D = RELATIONSHIPS


def oracle_macc(preds, gts, collapsed):
    key = (lambda r: min(r.index, 2)) if collapsed else (lambda r: r.index)
    classes = sorted({key(g) for g in gts})
    recalls = []
    for k in classes:
        rows = [i for i, g in enumerate(gts) if key(g) == k]
        recalls.append(sum(key(preds[i]) == k for i in rows) / len(rows))
    return sum(recalls) / len(recalls)


def test_perfect_predictions():
    gts = [P, F, O, PH, SA, SF, D]
    assert mean_accuracy(gts, gts, "full") == 1.0
    assert mean_accuracy(gts, gts, "collapsed") == 1.0


def test_absent_classes_are_excluded():
    gts = [P, P, PH, PH]
    preds = [P, P, P, P]
    assert mean_accuracy(preds, gts, "collapsed") == pytest.approx(0.5)
    assert mean_accuracy(preds, gts, "full") == pytest.approx(0.5)


def test_exception_confusions_count_only_when_collapsed():
    assert mean_accuracy([SA], [PH], "collapsed") == 1.0
    assert mean_accuracy([SA], [PH], "full") == 0.0


def test_labels_accept_names_and_indices():
    assert mean_accuracy(["Positive", 3], [0, Relationship.PHYSICAL_OBSTACLE], "full") == 1.0


@given(pairs=st.lists(st.tuples(st.integers(0, 6), st.integers(0, 6)), min_size=1, max_size=60))
@settings(max_examples=60)
def test_accuracy_matches_oracle(pairs):
    preds = [RELATIONSHIPS[p] for p, _ in pairs]
    gts = [RELATIONSHIPS[g] for _, g in pairs]
    for mode, collapsed in (("full", False), ("collapsed", True)):
        value = mean_accuracy(preds, gts, mode)
        assert 0.0 <= value <= 1.0
        assert value == pytest.approx(oracle_macc(preds, gts, collapsed), abs=1e-9)
    matrix = confusion_matrix(preds, gts, "full")
    assert matrix.sum() == len(pairs)
    np.testing.assert_array_equal(matrix.sum(axis=1), [sum(g is r for g in gts) for r in RELATIONSHIPS])
    # merging exceptions can only add correct predictions to the merged class
    exc = [i for i, g in enumerate(gts) if g.index >= 2]
    if exc:
        merged = sum(preds[i].index >= 2 for i in exc) / len(exc)
        full = sum(preds[i] is gts[i] for i in exc) / len(exc)
        assert merged >= full
        assert confusion_matrix(preds, gts, "collapsed")[2, 2] / len(exc) == pytest.approx(merged)


def test_empty_and_misaligned_inputs():
    with pytest.raises(ValueError):
        mean_accuracy([], [])
    with pytest.raises(ValueError):
        confusion_matrix([P], [P, F])


def test_multi_annotator_scores_average_per_annotator():
    preds = [P, PH, F]
    a1 = [P, PH, F]
    a2 = [P, SA, P]
    expected = (mean_accuracy(preds, a1) + mean_accuracy(preds, a2)) / 2
    assert multi_annotator_accuracy(preds, [a1, a2]) == pytest.approx(expected)
    scores = score_action(preds, [a1, a2])
    assert scores.macc_e == pytest.approx(expected)
    assert scores.annotators == 2 and scores.num_samples == 3
    assert scores.per_class_recall["Dangerous"] is None
    assert scores.confusion[3][3] == 1
