"""Word-level vocabulary with the special-token layout used across the model."""
from __future__ import annotations

import string
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

PAD, UNK, MASK, EOS, CLS1, CLS2, BOS1, BOS2 = range(8)
SPECIAL_NAMES = ("[PAD]", "[UNK]", "[MASK]", "[EOS]", "[CLS1]", "[CLS2]", "[BOS1]", "[BOS2]")
NUM_SPECIAL = len(SPECIAL_NAMES)

_PUNCT = str.maketrans({c: " " for c in string.punctuation})


def normalize(text: str) -> list[str]:
    """Lowercase, map ASCII punctuation to spaces, split on whitespace."""
    return text.lower().translate(_PUNCT).split()


@dataclass(frozen=True)
class Vocabulary:
    itos: tuple[str, ...]
    stoi: dict[str, int] = field(repr=False, compare=False)

    @classmethod
    def from_tokens(cls, tokens: Sequence[str]) -> Vocabulary:
        itos = SPECIAL_NAMES + tuple(tokens)
        stoi = {t: i for i, t in enumerate(itos)}
        if len(stoi) != len(itos):
            raise ValueError("duplicate token in vocabulary")
        return cls(itos, stoi)

    def __len__(self) -> int:
        return len(self.itos)

    @property
    def size(self) -> int:
        return len(self.itos)

    def id(self, token: str) -> int:
        return self.stoi.get(token, UNK)

    def save(self, path: str | Path) -> None:
        body = "".join(t + "\n" for t in self.itos[NUM_SPECIAL:])
        Path(path).write_text(body, encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> Vocabulary:
        lines = Path(path).read_text(encoding="utf-8").split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        return cls.from_tokens(lines)


def build_vocab(corpus: Iterable[str], min_count: int = 1) -> Vocabulary:
    counts: Counter[str] = Counter()
    n = 0
    for line in corpus:
        n += 1
        counts.update(normalize(line))
    if n == 0:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    kept = sorted((t for t, c in counts.items() if c >= min_count), key=lambda t: (-counts[t], t))
    return Vocabulary.from_tokens(kept)


@dataclass
class TokenStream:
    ids: np.ndarray
    pad_mask: np.ndarray  # True at real tokens

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=np.int64)
        self.pad_mask = np.asarray(self.pad_mask, dtype=bool)
        if self.ids.shape != self.pad_mask.shape:
            raise ValueError("ids and pad_mask lengths differ")

    @classmethod
    def of(cls, ids: Sequence[int]) -> TokenStream:
        ids = np.asarray(ids, dtype=np.int64)
        return cls(ids, ids != PAD)

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def n_real(self) -> int:
        return int(self.pad_mask.sum())

    def padded(self, length: int) -> TokenStream:
        if length < len(self):
            raise ValueError(f"cannot pad a stream of {len(self)} tokens to {length}")
        extra = length - len(self)
        return TokenStream(
            np.concatenate([self.ids, np.full(extra, PAD, np.int64)]),
            np.concatenate([self.pad_mask, np.zeros(extra, bool)]),
        )


def encode_ids(
    vocab: Vocabulary,
    text: str,
    prefix: int | None = None,
    append_eos: bool = False,
    max_len: int = 32,
) -> list[int]:
    if max_len < 2:
        raise ValueError("max_len must be >= 2")
    body = [vocab.id(t) for t in normalize(text)]
    room = max_len - (prefix is not None) - append_eos
    ids = ([prefix] if prefix is not None else []) + body[:room]
    if append_eos:
        ids.append(EOS)
    return ids


def encode(
    vocab: Vocabulary,
    text: str,
    prefix: int | None = None,
    append_eos: bool = False,
    max_len: int = 32,
) -> TokenStream:
    return TokenStream.of(encode_ids(vocab, text, prefix, append_eos, max_len))


def decode(vocab: Vocabulary, ids: Iterable[int]) -> str:
    words = []
    for i in ids:
        i = int(i)
        if not 0 <= i < len(vocab):
            raise IndexError(f"token id {i} outside vocabulary of size {len(vocab)}")
        if i == EOS:
            break
        if i >= NUM_SPECIAL:
            words.append(vocab.itos[i])
    return " ".join(words)
