import numpy as np
import pytest

from app.decoder.lstm import DecoderBatch, SentenceDecoder, decode_greedy, teacher_forced_loss
from app.decoder.vocab import (
    BOS_ID,
    EOS_ID,
    PAD_ID,
    RESERVED,
    UNK_ID,
    Sentence,
    Vocabulary,
    build_vocab,
    load_vocab,
    save_vocab,
    tokenize,
)
from app.errors import DimensionError, VocabularyError
from app.harness.checks import GRADCHECK_TOLERANCE, decoder_gradcheck
from app.models import AdamConfig
from app.numeric.optim import adam_step
from app.numeric.params import ParamStore


# ---- vocabulary --------------------------------------------------------------------

def test_tokenize_lowercases_and_strips_punctuation():
    assert tokenize("The chair, is TAKEN.") == ["the", "chair", "is", "taken"]
    assert tokenize("  ... ") == []


def test_min_frequency_drops_rare_tokens():
    vocab = build_vocab(["a b", "a c"], min_freq=2)
    assert vocab.tokens == RESERVED + ["a"]
    assert vocab.encode("b c a").tokens == [UNK_ID, UNK_ID, 4]
    assert build_vocab(["a b", "a c"], min_freq=1).tokens == RESERVED + ["a", "b", "c"]


def test_vocabulary_is_deterministic_and_ordered_by_frequency():
    corpus = ["the cup is hot", "the stove is hot", "the floor is wet"]
    first = build_vocab(corpus, min_freq=1)
    assert first == build_vocab(list(corpus), min_freq=1)
    assert first.tokens[4:7] == ["is", "the", "hot"]


def test_encode_decode_round_trip():
    vocab = build_vocab(["the chair is occupied by a person"] * 2)
    text = "a person is occupied by the chair"
    assert vocab.decode(vocab.encode(text)) == text
    assert vocab.decode([BOS_ID, 4, EOS_ID, 5]) == vocab.tokens[4]
    with pytest.raises(VocabularyError):
        vocab.decode([len(vocab)])


def test_vocab_file_round_trip(tmp_path):
    vocab = build_vocab(["you would fall", "you would get burned"], min_freq=1)
    assert load_vocab(save_vocab(tmp_path / "vocab_sit.txt", vocab)) == vocab


def test_vocabulary_errors(tmp_path):
    with pytest.raises(VocabularyError):
        build_vocab([])
    with pytest.raises(VocabularyError):
        Vocabulary(["a", "b"])
    with pytest.raises(VocabularyError):
        Vocabulary(RESERVED + ["a", "a"])
    with pytest.raises(VocabularyError):
        load_vocab(tmp_path / "missing.txt")


# ---- teacher forcing ------------------------------------------------------------------

def test_batch_shifts_and_masks():
    batch = DecoderBatch.from_sentences([[5, 6, 7], [8]], vocab_size=10)
    np.testing.assert_array_equal(batch.inputs, [[BOS_ID, 5, 6, 7], [BOS_ID, 8, PAD_ID, PAD_ID]])
    np.testing.assert_array_equal(batch.targets, [[5, 6, 7, EOS_ID], [8, EOS_ID, PAD_ID, PAD_ID]])
    np.testing.assert_allclose(batch.weights.sum(axis=1), 1.0)
    assert batch.weights[1, 2] == 0


def test_batch_rejects_bad_targets():
    with pytest.raises(VocabularyError):
        DecoderBatch.from_sentences([[5, 10]], vocab_size=10)
    with pytest.raises(VocabularyError):
        DecoderBatch.from_sentences([[EOS_ID]], vocab_size=10)


@pytest.fixture
def decoder(float64):
    store = ParamStore()
    return store, SentenceDecoder.create(store, "sit.explanation", 10, 8, np.random.default_rng(0))


def test_uniform_output_gives_log_v(decoder):
    store, dec = decoder
    store["sit.explanation.W_out"][...] = 0
    loss = teacher_forced_loss(np.ones(8), Sentence([4, 5, 6]), dec)
    assert loss == pytest.approx(np.log(10))


def test_padding_after_eos_is_ignored(decoder):
    _, dec = decoder
    h_o = np.random.default_rng(1).normal(size=8)
    plain = teacher_forced_loss(h_o, [4, 5, 6], dec)
    assert teacher_forced_loss(h_o, [4, 5, 6, EOS_ID, PAD_ID, PAD_ID], dec) == pytest.approx(plain, abs=1e-12)
    assert teacher_forced_loss(h_o, [4, 5, 6, PAD_ID], dec) == pytest.approx(plain, abs=1e-12)


def test_batch_loss_is_the_sum_of_sentence_losses(decoder):
    _, dec = decoder
    rng = np.random.default_rng(2)
    h_o = rng.normal(size=(2, 8))
    sentences = [Sentence([4, 5, 6]), Sentence([7])]
    total, _ = dec.batch_loss(h_o, sentences)
    separate = sum(teacher_forced_loss(h, s, dec) for h, s in zip(h_o, sentences))
    assert total == pytest.approx(separate, rel=1e-12)
    with pytest.raises(DimensionError):
        dec.batch_loss(h_o[:1], sentences)


@pytest.mark.parametrize("length", [1, 3])
def test_decoder_gradients(length):
    errors = decoder_gradcheck(seed=11, length=length)
    assert max(errors.values()) <= GRADCHECK_TOLERANCE


# ---- greedy decoding ------------------------------------------------------------------

def test_greedy_decoding_is_deterministic_and_bounded(decoder):
    _, dec = decoder
    h_o = np.random.default_rng(3).normal(size=8)
    first = decode_greedy(h_o, dec, max_len=6)
    assert first == decode_greedy(h_o.copy(), dec, max_len=6)
    assert len(first) <= 6
    assert len(decode_greedy(h_o, dec, max_len=1)) <= 1
    with pytest.raises(ValueError):
        decode_greedy(h_o, dec, max_len=0)


def test_truncation_is_flagged(decoder):
    store, dec = decoder
    # make token 4 always win: never emits <eos>
    store["sit.explanation.W_out"][...] = 0
    store["sit.explanation.b_out"][...] = 0
    store["sit.explanation.b_out"][4] = 5.0
    out = decode_greedy(np.ones(8), dec, max_len=3)
    assert out.tokens == [4, 4, 4] and out.truncated
    store["sit.explanation.b_out"][EOS_ID] = 10.0
    out = decode_greedy(np.ones(8), dec, max_len=3)
    assert out.tokens == [] and not out.truncated


def overfit(dec, store, h_o, target, lr, steps):
    config = AdamConfig(learning_rate=lr, decay_factor=1.0)
    losses = []
    for _ in range(steps):
        loss, cache = dec.batch_loss(h_o[None, :], [target])
        dec.backward(cache)
        adam_step(store, config, epoch=1)
        losses.append(loss)
    return losses


def test_loss_decreases_when_overfitting_one_sentence(float64):
    store = ParamStore()
    dec = SentenceDecoder.create(store, "sit.consequence", 12, 16, np.random.default_rng(4))
    h_o = np.abs(np.random.default_rng(5).normal(size=16))
    losses = overfit(dec, store, h_o, Sentence([4, 7, 9, 5, 11]), lr=3e-4, steps=50)
    assert all(b < a for a, b in zip(losses, losses[1:]))


def test_overfit_sentence_is_reproduced_by_greedy_decoding(float64):
    store = ParamStore()
    dec = SentenceDecoder.create(store, "sit.consequence", 12, 16, np.random.default_rng(6))
    h_o = np.abs(np.random.default_rng(7).normal(size=16))
    target = Sentence([4, 7, 9, 5, 11])
    losses = overfit(dec, store, h_o, target, lr=1e-2, steps=500)
    assert losses[-1] < 0.1
    out = dec.decode_greedy(h_o, max_len=20)
    assert out.tokens == target.tokens and not out.truncated
