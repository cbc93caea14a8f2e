"""
VOCABULARY - WHICH WORDS CAN THE DECODER SAY?
=============================================
One vocabulary per action, shared by its explanation and consequence
decoders. Words seen fewer than ``min_freq`` times are dropped and read
back as <unk>.

Think of it like:
- tokenize("The chair is taken.") -> ["the", "chair", "is", "taken"]
- ids 0..3 are always <pad>, <bos>, <eos>, <unk>
- the rest are ordered by frequency (most common first), ties by spelling

On disk (vocab_<action>.txt): one token per line, reserved tokens first.
"""

from __future__ import annotations

import string
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Sequence

from app.errors import VocabularyError

PAD, BOS, EOS, UNK = "<pad>", "<bos>", "<eos>", "<unk>"
RESERVED = [PAD, BOS, EOS, UNK]
PAD_ID, BOS_ID, EOS_ID, UNK_ID = range(4)


def tokenize(text: str) -> List[str]:
    tokens = (t.strip(string.punctuation) for t in text.lower().split())
    return [t for t in tokens if t]


@dataclass
class Sentence:
    """Token ids without <bos>/<eos>; ``truncated`` marks decoding cut off at max_len."""
    tokens: List[int] = field(default_factory=list)
    truncated: bool = False

    def __len__(self) -> int:
        return len(self.tokens)


class Vocabulary:
    def __init__(self, tokens: Sequence[str], min_freq: int = 2) -> None:
        if list(tokens[:len(RESERVED)]) != RESERVED:
            raise VocabularyError(f"vocabulary must start with {RESERVED}")
        if len(set(tokens)) != len(tokens):
            raise VocabularyError("vocabulary lists a token twice")
        self.tokens: List[str] = list(tokens)
        self.index: Dict[str, int] = {t: i for i, t in enumerate(self.tokens)}
        self.min_freq = min_freq

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.index

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Vocabulary) and self.tokens == other.tokens

    def id(self, token: str) -> int:
        return self.index.get(token, UNK_ID)

    def encode(self, text: str) -> Sentence:
        return Sentence(tokens=[self.id(t) for t in tokenize(text)])

    def decode(self, sentence: Sentence | Sequence[int]) -> str:
        """Surface form; stops at <eos>, skips <pad> and <bos>."""
        ids = sentence.tokens if isinstance(sentence, Sentence) else sentence
        words: List[str] = []
        for i in ids:
            i = int(i)
            if not 0 <= i < len(self.tokens):
                raise VocabularyError(f"token id {i} outside vocabulary of size {len(self.tokens)}")
            if i == EOS_ID:
                break
            if i in (PAD_ID, BOS_ID):
                continue
            words.append(self.tokens[i])
        return " ".join(words)

    def check(self, ids: Iterable[int]) -> None:
        bad = sorted({int(i) for i in ids if not 0 <= int(i) < len(self.tokens)})
        if bad:
            raise VocabularyError(f"token ids {bad} outside vocabulary of size {len(self.tokens)}")


def build_vocab(corpus: Iterable[str], min_freq: int = 2) -> Vocabulary:
    counts: Counter = Counter()
    for text in corpus:
        counts.update(tokenize(text))
    if not counts:
        raise VocabularyError("cannot build a vocabulary from an empty corpus")
    kept = sorted((t for t, c in counts.items() if c >= min_freq and t not in RESERVED), key=lambda t: (-counts[t], t))
    return Vocabulary(RESERVED + kept, min_freq=min_freq)


def save_vocab(path: Path | str, vocab: Vocabulary) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(vocab.tokens) + "\n")
    return path


def load_vocab(path: Path | str) -> Vocabulary:
    path = Path(path)
    if not path.exists():
        raise VocabularyError(f"vocabulary file not found: {path}")
    tokens = [line for line in path.read_text().splitlines() if line]
    return Vocabulary(tokens)
