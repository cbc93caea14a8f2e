"""
SENTENCE DECODER - TURNING h_o INTO WORDS
=========================================
An LSTM whose starting hidden state is an affine map of a node's output
feature h_o (cell state starts at zero). Explanation and consequence use
two decoders with separate weights.

Think of it like:
- training: feed <bos>, w1 .. wn and score the prediction of w1 .. wn, <eos>
- generation: feed back the most likely word until <eos> or max_len
- backward hands dL/dh_o to whoever produced h_o (the graph trunk)
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Sequence

import numpy as np

from app.decoder.vocab import BOS_ID, EOS_ID, PAD_ID, Sentence
from app.errors import DimensionError, VocabularyError
from app.numeric import ops
from app.numeric.params import ParamStore
from app.numeric.tensor import get_dtype

# gate blocks inside the stacked 4H pre-activation
GATE_ORDER = ("input", "forget", "output", "candidate")


@dataclass
class DecoderBatch:
    inputs: np.ndarray  # (B, L) <bos>, w1..wn, pad
    targets: np.ndarray  # (B, L) w1..wn, <eos>, pad
    weights: np.ndarray  # (B, L) 1/(n+1) on real positions, 0 on padding

    @classmethod
    def from_sentences(cls, sentences: Sequence[Sentence | Sequence[int]], vocab_size: int) -> "DecoderBatch":
        rows: List[List[int]] = []
        for s in sentences:
            ids = list(s.tokens if isinstance(s, Sentence) else s)
            # anything after the first <eos> (or trailing <pad>) is masked out
            if EOS_ID in ids:
                ids = ids[:ids.index(EOS_ID)]
            while ids and ids[-1] == PAD_ID:
                ids.pop()
            if not ids:
                raise VocabularyError("teacher forcing needs a non-empty target sentence")
            bad = [i for i in ids if not 0 <= int(i) < vocab_size]
            if bad:
                raise VocabularyError(f"token ids {bad} outside vocabulary of size {vocab_size}")
            rows.append([int(i) for i in ids])
        length = max(len(r) for r in rows) + 1
        b = len(rows)
        inputs = np.full((b, length), PAD_ID, dtype=np.int64)
        targets = np.full((b, length), PAD_ID, dtype=np.int64)
        weights = np.zeros((b, length), dtype=get_dtype())
        for k, r in enumerate(rows):
            n = len(r)
            inputs[k, 0] = BOS_ID
            inputs[k, 1:n + 1] = r
            targets[k, :n] = r
            targets[k, n] = EOS_ID
            weights[k, :n + 1] = 1.0 / (n + 1)
        return cls(inputs=inputs, targets=targets, weights=weights)


class SentenceDecoder:
    """LSTM decoder stored under ``prefix`` in a ParamStore."""

    def __init__(self, store: ParamStore, prefix: str, vocab_size: int, hidden: int) -> None:
        self.store = store
        self.prefix = prefix
        self.vocab_size = vocab_size
        self.hidden = hidden

    def __getitem__(self, key: str) -> np.ndarray:
        return self.store.params[f"{self.prefix}.{key}"]

    def _grad(self, key: str, value: np.ndarray) -> None:
        self.store.accumulate(f"{self.prefix}.{key}", value)

    @classmethod
    def create(cls, store: ParamStore, prefix: str, vocab_size: int, hidden: int, rng: np.random.Generator) -> "SentenceDecoder":
        store.add(f"{prefix}.embedding", (vocab_size, hidden), rng)
        store.add(f"{prefix}.W_x", (4 * hidden, hidden), rng)
        store.add(f"{prefix}.W_hh", (4 * hidden, hidden), rng)
        store.add(f"{prefix}.b", (4 * hidden,), init="zeros")
        store.add(f"{prefix}.W_out", (vocab_size, hidden), rng)
        store.add(f"{prefix}.b_out", (vocab_size,), init="zeros")
        store.add(f"{prefix}.W_init", (hidden, hidden), rng)
        store.add(f"{prefix}.b_init", (hidden,), init="zeros")
        return cls(store, prefix, vocab_size, hidden)

    # ---- one LSTM step ----------------------------------------------------

    def _step(self, token_ids: np.ndarray, h_prev: np.ndarray, c_prev: np.ndarray):
        hsz = self.hidden
        x = self["embedding"][token_ids]
        a = ops.linear(self["W_x"], self["b"], x) + ops.linear(self["W_hh"], None, h_prev)
        i = ops.sigmoid(a[:, :hsz])
        f = ops.sigmoid(a[:, hsz:2 * hsz])
        o = ops.sigmoid(a[:, 2 * hsz:3 * hsz])
        g = ops.tanh(a[:, 3 * hsz:])
        c = f * c_prev + i * g
        tc = ops.tanh(c)
        h = o * tc
        return h, c, {"x": x, "i": i, "f": f, "o": o, "g": g, "tc": tc, "h_prev": h_prev, "c_prev": c_prev, "h": h}

    def initial_state(self, h_o: np.ndarray):
        h_o = np.atleast_2d(h_o)
        if h_o.shape[1] != self.hidden:
            raise DimensionError(f"decoder {self.prefix}: h_o has {h_o.shape[1]} entries, expected {self.hidden}")
        h0 = ops.linear(self["W_init"], self["b_init"], h_o)
        return h0, np.zeros_like(h0)

    # ---- teacher forcing --------------------------------------------------

    def batch_loss(self, h_o: np.ndarray, sentences: Sequence[Sentence | Sequence[int]]):
        """
        Sum over the batch of each sentence's mean token cross-entropy.

        Returns (loss_sum, cache); pass the cache to ``backward``.
        """
        batch = DecoderBatch.from_sentences(sentences, self.vocab_size)
        h_o = np.atleast_2d(h_o)
        if h_o.shape[0] != batch.inputs.shape[0]:
            raise DimensionError(f"{h_o.shape[0]} conditioning vectors for {batch.inputs.shape[0]} sentences")
        h, c = self.initial_state(h_o)
        steps: List[Dict[str, np.ndarray]] = []
        total = 0.0
        for t in range(batch.inputs.shape[1]):
            h, c, cache = self._step(batch.inputs[:, t], h, c)
            logits = ops.linear(self["W_out"], self["b_out"], h)
            losses, dlogits = ops.batch_cross_entropy(logits, batch.targets[:, t], batch.weights[:, t])
            total += float(losses.sum())
            cache["dlogits"] = dlogits
            steps.append(cache)
        return total, {"batch": batch, "steps": steps, "h_o": h_o}

    def backward(self, cache, scale: float = 1.0) -> np.ndarray:
        """Accumulate decoder gradients of ``scale * loss_sum``; returns dL/dh_o (B, H)."""
        hsz = self.hidden
        batch: DecoderBatch = cache["batch"]
        steps = cache["steps"]
        h_o = cache["h_o"]
        grads = {k: np.zeros_like(self[k]) for k in ("embedding", "W_x", "W_hh", "b", "W_out", "b_out")}
        dh_next = np.zeros((h_o.shape[0], hsz), dtype=h_o.dtype)
        dc_next = np.zeros_like(dh_next)
        for t in range(len(steps) - 1, -1, -1):
            s = steps[t]
            dlogits = s["dlogits"] * scale
            grads["W_out"] += dlogits.T @ s["h"]
            grads["b_out"] += dlogits.sum(axis=0)
            dh = dlogits @ self["W_out"] + dh_next
            do = dh * s["tc"]
            dc = dc_next + ops.tanh_backward(dh * s["o"], s["tc"])
            di = dc * s["g"]
            dg = dc * s["i"]
            df = dc * s["c_prev"]
            da = np.concatenate([
                ops.sigmoid_backward(di, s["i"]),
                ops.sigmoid_backward(df, s["f"]),
                ops.sigmoid_backward(do, s["o"]),
                ops.tanh_backward(dg, s["g"]),
            ], axis=1)
            grads["W_x"] += da.T @ s["x"]
            grads["W_hh"] += da.T @ s["h_prev"]
            grads["b"] += da.sum(axis=0)
            np.add.at(grads["embedding"], batch.inputs[:, t], da @ self["W_x"])
            dh_next = da @ self["W_hh"]
            dc_next = dc * s["f"]
        for key, value in grads.items():
            self._grad(key, value)
        dW_init, db_init, d_h_o = ops.linear_backward(dh_next, self["W_init"], h_o)
        self._grad("W_init", dW_init)
        self._grad("b_init", db_init)
        return d_h_o

    # ---- generation -------------------------------------------------------

    def decode_greedy(self, h_o: np.ndarray, max_len: int = 20) -> Sentence:
        if max_len < 1:
            raise ValueError(f"max_len must be >= 1, got {max_len}")
        h, c = self.initial_state(h_o)
        token = np.array([BOS_ID])
        out: List[int] = []
        for _ in range(max_len):
            h, c, _ = self._step(token, h, c)
            logits = ops.linear(self["W_out"], self["b_out"], h)[0]
            nxt = int(np.argmax(logits))
            if nxt == EOS_ID:
                return Sentence(tokens=out, truncated=False)
            out.append(nxt)
            token = np.array([nxt])
        return Sentence(tokens=out, truncated=True)


def teacher_forced_loss(h_o: np.ndarray, target: Sentence | Sequence[int], decoder: SentenceDecoder) -> float:
    """Mean per-token cross-entropy of one target sentence (its <eos> included)."""
    loss, _ = decoder.batch_loss(np.atleast_2d(h_o), [target])
    return loss


def decode_greedy(h_o: np.ndarray, decoder: SentenceDecoder, max_len: int = 20) -> Sentence:
    return decoder.decode_greedy(h_o, max_len)
