"""Shared vocabulary, tokenizer and padding utilities for the text encoder and the frozen LM."""

from __future__ import annotations

import hashlib
import json
import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

PAD, CLS, DEC, BOS, EOS, UNK = "[PAD]", "[CLS]", "[DEC]", "[BOS]", "[EOS]", "[UNK]"
SPECIAL_TOKENS = (PAD, CLS, DEC, BOS, EOS, UNK)
PAD_ID, CLS_ID, DEC_ID, BOS_ID, EOS_ID, UNK_ID = range(6)

# Bracketed markers such as "[2]" or "[node]" stay whole; punctuation splits off words.
_TOKEN_RE = re.compile(r"\[[^\[\]\s]+\]|[^\W_]+(?:['-][^\W_]+)*|[^\w\s]")


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


class Vocabulary:
    def __init__(self, tokens: Sequence[str]):
        if tuple(tokens[: len(SPECIAL_TOKENS)]) != SPECIAL_TOKENS:
            raise ValueError(f"vocabulary must start with the reserved tokens {SPECIAL_TOKENS}")
        if len(set(tokens)) != len(tokens):
            raise ValueError("vocabulary tokens must be unique")
        self.tokens: tuple[str, ...] = tuple(tokens)
        self._index = {t: i for i, t in enumerate(self.tokens)}

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._index

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Vocabulary) and self.tokens == other.tokens

    def id(self, token: str) -> int:
        return self._index.get(token, UNK_ID)

    def ids(self, text: str) -> list[int]:
        """Token ids of ``text`` without special tokens, padding or truncation."""
        return [self.id(t) for t in tokenize(text)]

    def decode(self, ids: Iterable[int], skip_special: bool = True) -> str:
        out = []
        for i in ids:
            i = int(i)
            if skip_special and i < len(SPECIAL_TOKENS):
                continue
            out.append(self.tokens[i])
        return " ".join(out)

    @property
    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.tokens).encode()).hexdigest()[:16]

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps({"format": "vocab-v1", "tokens": list(self.tokens)}) + "\n",
                              encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        if data.get("format") != "vocab-v1":
            raise ValueError(f"{path}: not a vocab-v1 file")
        return cls(data["tokens"])


def build_vocab(corpus: Iterable[str], max_size: int) -> Vocabulary:
    """Keep the most frequent tokens (ties broken lexicographically) up to ``max_size`` entries in total."""
    counts: Counter[str] = Counter()
    n_lines = 0
    for line in corpus:
        n_lines += 1
        counts.update(tokenize(line))
    if n_lines == 0 or not counts:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    if max_size < len(SPECIAL_TOKENS):
        raise ValueError(f"max_size must be at least {len(SPECIAL_TOKENS)}")
    for special in SPECIAL_TOKENS:
        counts.pop(special.lower(), None)
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    kept = [tok for tok, _ in ranked[: max_size - len(SPECIAL_TOKENS)]]
    return Vocabulary(list(SPECIAL_TOKENS) + kept)


@dataclass(frozen=True)
class TokenSequence:
    ids: tuple[int, ...]
    mask: tuple[int, ...]

    def __post_init__(self) -> None:
        if len(self.ids) != len(self.mask):
            raise ValueError("mask length must equal id length")

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def length(self) -> int:
        """Number of real (non-pad) tokens."""
        return sum(self.mask)


def encode(vocab: Vocabulary, text: str, max_len: int, prepend: str | None = None) -> TokenSequence:
    if max_len < 2:
        raise ValueError("max_len must be >= 2")
    ids = vocab.ids(text)
    if prepend is not None:
        if prepend not in SPECIAL_TOKENS:
            raise ValueError(f"prepend must be a special token, got {prepend!r}")
        ids = [vocab.id(prepend)] + ids
    ids = ids[:max_len]
    n = len(ids)
    return TokenSequence(tuple(ids) + (PAD_ID,) * (max_len - n), (1,) * n + (0,) * (max_len - n))
