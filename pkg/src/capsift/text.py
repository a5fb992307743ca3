"""Tokenization, vocabulary management and n-gram extraction.

Shared by the similarity scorer and the captioner so that search tasks and
captions always pass through the same tokenizer.

Special tokens occupy fixed indices so that serialized vocabularies, weights
and datasets stay mutually compatible:

    <start> = 0   <end> = 1   <pad> = 2   <unk> = 3
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .errors import ParameterError

START_TOKEN = "<start>"
END_TOKEN = "<end>"
PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"

START_ID = 0
END_ID = 1
PAD_ID = 2
UNK_ID = 3

SPECIAL_TOKENS = (START_TOKEN, END_TOKEN, PAD_TOKEN, UNK_TOKEN)
NUM_SPECIALS = len(SPECIAL_TOKENS)

# Punctuation stripped from token edges only; interior characters are kept.
_EDGE_PUNCTUATION = '.,;:!?"()'


def tokenize(text: str) -> list[str]:
    """Lowercase, split on whitespace, strip edge punctuation, drop empties."""
    tokens = []
    for raw in text.lower().split():
        token = raw.strip(_EDGE_PUNCTUATION)
        if token:
            tokens.append(token)
    return tokens


class Vocabulary:
    """Immutable token <-> index mapping with the four fixed specials."""

    def __init__(self, content_tokens: Sequence[str] = ()):
        seen: set[str] = set()
        for token in content_tokens:
            if token in SPECIAL_TOKENS:
                raise ParameterError(f"content token collides with special: {token!r}")
            if token in seen:
                raise ParameterError(f"duplicate content token: {token!r}")
            seen.add(token)
        self._tokens: tuple[str, ...] = SPECIAL_TOKENS + tuple(content_tokens)
        self._index = {token: i for i, token in enumerate(self._tokens)}

    @classmethod
    def build(cls, corpus: Iterable[Sequence[str]], min_count: int = 1) -> "Vocabulary":
        """Build from tokenized sentences; keeps tokens with frequency >= min_count.

        Content tokens are ordered by descending frequency, ties broken
        lexicographically, so the result is deterministic. An empty corpus
        yields a specials-only vocabulary.
        """
        if min_count < 1:
            raise ParameterError(f"min_count must be >= 1, got {min_count}")
        counts: Counter[str] = Counter()
        for sentence in corpus:
            counts.update(sentence)
        for special in SPECIAL_TOKENS:
            counts.pop(special, None)
        kept = [t for t, c in counts.items() if c >= min_count]
        kept.sort(key=lambda t: (-counts[t], t))
        return cls(kept)

    def __len__(self) -> int:
        return len(self._tokens)

    @property
    def size(self) -> int:
        return len(self._tokens)

    @property
    def tokens(self) -> tuple[str, ...]:
        return self._tokens

    def __contains__(self, token: str) -> bool:
        return token in self._index

    def to_id(self, token: str) -> int:
        """Index for a token; unknown tokens map to <unk>."""
        return self._index.get(token, UNK_ID)

    def to_token(self, index: int) -> str:
        if not 0 <= index < len(self._tokens):
            raise ParameterError(f"token index {index} out of range for K={len(self._tokens)}")
        return self._tokens[index]

    # Serialization: a JSON array of token strings in index order.

    def to_json(self) -> str:
        return json.dumps(list(self._tokens))

    @classmethod
    def from_json(cls, payload: str) -> "Vocabulary":
        tokens = json.loads(payload)
        if not isinstance(tokens, list) or tuple(tokens[:NUM_SPECIALS]) != SPECIAL_TOKENS:
            raise ParameterError("vocabulary JSON must start with the four special tokens")
        return cls(tokens[NUM_SPECIALS:])

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Vocabulary) and self._tokens == other._tokens

    def __repr__(self) -> str:
        return f"Vocabulary(K={len(self._tokens)})"


@dataclass(frozen=True)
class Caption:
    """A tokenized sentence as a sequence of vocabulary indices.

    May carry framing specials (<start>/<end>) and trailing <pad>; the
    content length counts only non-special tokens. Padding is only valid as
    a suffix.
    """

    ids: tuple[int, ...]

    def __post_init__(self):
        seen_pad = False
        for i in self.ids:
            if i < 0:
                raise ParameterError(f"negative token id: {i}")
            if i == PAD_ID:
                seen_pad = True
            elif seen_pad:
                raise ParameterError("pad index appears before a non-pad index")

    @property
    def content_ids(self) -> tuple[int, ...]:
        return tuple(i for i in self.ids if i >= NUM_SPECIALS)

    @property
    def content_length(self) -> int:
        return sum(1 for i in self.ids if i >= NUM_SPECIALS)

    def validate(self, vocab_size: int, max_length: int) -> "Caption":
        """Check the dataset-level invariants: ids in range, 1 <= C <= max_length."""
        for i in self.ids:
            if i >= vocab_size:
                raise ParameterError(f"token id {i} out of range for K={vocab_size}")
        c = self.content_length
        if c < 1:
            raise ParameterError("caption has no content tokens")
        if c > max_length:
            raise ParameterError(f"caption length {c} exceeds maximum {max_length}")
        return self


def encode(tokens: Sequence[str], vocab: Vocabulary) -> Caption:
    """Map tokens to vocabulary indices; out-of-vocabulary tokens become <unk>."""
    return Caption(tuple(vocab.to_id(t) for t in tokens))


def decode(caption: Caption | Sequence[int], vocab: Vocabulary) -> list[str]:
    """Map indices back to tokens, dropping all special tokens."""
    ids = caption.ids if isinstance(caption, Caption) else caption
    out = []
    for i in ids:
        token = vocab.to_token(i)
        if i >= NUM_SPECIALS:
            out.append(token)
    return out


def ngrams(tokens: Sequence[str], n: int) -> Counter:
    """Multiset of all contiguous n-token windows."""
    if n < 1:
        raise ParameterError(f"n-gram order must be >= 1, got {n}")
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))
