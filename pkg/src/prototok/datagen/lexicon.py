"""Part-of-speech word lists backing the sentence generators.

The on-disk format is a three-column TSV: word, tag, rank. Rank orders words
by intended frequency (lower is more common) so samplers can truncate to a
core vocabulary if they want one.
"""

from __future__ import annotations

import importlib.resources
from dataclasses import dataclass

from ..errors import ValidationError

POS_TAGS = ("noun", "verb", "adjective", "adverb", "determiner",
            "preposition", "pronoun", "conjunction")


@dataclass(frozen=True)
class Lexicon:
    """Words bucketed by part of speech, with a global frequency rank."""

    buckets: dict
    ranks: dict

    def __post_init__(self) -> None:
        for tag in POS_TAGS:
            if not self.buckets.get(tag):
                raise ValidationError(f"lexicon has no words tagged {tag!r}")

    def words(self, tag: str) -> tuple:
        if tag not in POS_TAGS:
            raise ValidationError(f"unknown part-of-speech tag {tag!r}")
        return self.buckets[tag]

    def tag_of(self, word: str):
        for tag in POS_TAGS:
            if word in self.buckets[tag]:
                return tag
        return None

    def __len__(self) -> int:
        return sum(len(v) for v in self.buckets.values())


def _parse_lines(lines, origin: str) -> Lexicon:
    buckets = {tag: [] for tag in POS_TAGS}
    ranks = {}
    seen = set()
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise ValidationError(
                f"{origin}:{lineno}: expected 'word<TAB>tag<TAB>rank', got {line!r}")
        word, tag, rank_text = parts
        word = word.strip().lower()
        tag = tag.strip().lower()
        if tag not in POS_TAGS:
            raise ValidationError(f"{origin}:{lineno}: unknown tag {tag!r}")
        if word in seen:
            raise ValidationError(f"{origin}:{lineno}: duplicate word {word!r}")
        try:
            rank = int(rank_text)
        except ValueError:
            raise ValidationError(f"{origin}:{lineno}: rank {rank_text!r} is not an integer")
        seen.add(word)
        buckets[tag].append(word)
        ranks[word] = rank
    return Lexicon(buckets={tag: tuple(ws) for tag, ws in buckets.items()}, ranks=ranks)


def load_lexicon(path) -> Lexicon:
    with open(path, "r", encoding="utf-8") as fh:
        return _parse_lines(fh, str(path))


def save_lexicon(lexicon: Lexicon, path) -> None:
    rows = []
    for tag in POS_TAGS:
        for word in lexicon.buckets[tag]:
            rows.append((lexicon.ranks[word], word, tag))
    rows.sort()
    with open(path, "w", encoding="utf-8") as fh:
        for rank, word, tag in rows:
            fh.write(f"{word}\t{tag}\t{rank}\n")


def bundled_lexicon() -> Lexicon:
    resource = importlib.resources.files("prototok.datagen").joinpath("data/lexicon.tsv")
    return _parse_lines(resource.read_text(encoding="utf-8").splitlines(), "lexicon.tsv")
