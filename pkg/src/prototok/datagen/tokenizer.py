"""Word-level tokenizer and vocabulary for feeding text to the model."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass

import numpy as np

from ..errors import ValidationError

UNKNOWN_TOKEN = "<unk>"

_TOKEN_RE = re.compile(r"[\w']+|[^\w\s]")


def split_tokens(text: str) -> list:
    return _TOKEN_RE.findall(text)


@dataclass(frozen=True)
class Vocabulary:
    """Token-to-id table; id 0 is always the unknown token."""

    tokens: tuple

    def __post_init__(self) -> None:
        if not self.tokens or self.tokens[0] != UNKNOWN_TOKEN:
            raise ValidationError(f"vocabulary must start with {UNKNOWN_TOKEN!r}")
        if len(set(self.tokens)) != len(self.tokens):
            raise ValidationError("vocabulary contains duplicate tokens")
        object.__setattr__(self, "_index", {t: i for i, t in enumerate(self.tokens)})

    def __len__(self) -> int:
        return len(self.tokens)

    def id_of(self, token: str) -> int:
        return self._index.get(token, 0)

    def token_of(self, token_id: int) -> str:
        if not 0 <= token_id < len(self.tokens):
            raise ValidationError(
                f"token id {token_id} outside vocabulary of size {len(self.tokens)}")
        return self.tokens[token_id]


def build_vocabulary(texts, max_size=None) -> Vocabulary:
    """Count tokens over `texts`; order by frequency (desc) then alphabetically."""
    counts = {}
    for text in texts:
        for tok in split_tokens(text):
            counts[tok] = counts.get(tok, 0) + 1
    ordered = sorted(counts, key=lambda t: (-counts[t], t))
    if max_size is not None:
        if max_size < 1:
            raise ValidationError(f"max_size must be >= 1, got {max_size}")
        ordered = ordered[:max_size - 1]  # reserve a slot for <unk>
    return Vocabulary(tokens=(UNKNOWN_TOKEN, *ordered))


def tokenize(text: str, vocab: Vocabulary) -> np.ndarray:
    """Map text to an int64 id array; empty text gives an empty array."""
    return np.array([vocab.id_of(t) for t in split_tokens(text)], dtype=np.int64)


def detokenize(token_ids, vocab: Vocabulary) -> str:
    return " ".join(vocab.token_of(int(i)) for i in np.asarray(token_ids).ravel())


def save_vocabulary(vocab: Vocabulary, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({"tokens": list(vocab.tokens)}, fh, indent=2)


def load_vocabulary(path) -> Vocabulary:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(obj, dict) or "tokens" not in obj:
        raise ValidationError(f"{path}: expected an object with a 'tokens' list")
    return Vocabulary(tokens=tuple(obj["tokens"]))
