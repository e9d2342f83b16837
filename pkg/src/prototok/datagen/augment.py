"""Character-level typo augmentation with a bounded event budget.

One augmentation event targets one word with one edit kind; within the word,
each position eligible for that kind is modified independently at the
configured probability, with one forced when the coin flips all miss. No
edit may create a run of the same letter (case-insensitive) longer than the
repetition cap, whichever kind produced it.
"""

from __future__ import annotations

import string
from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigurationError, ValidationError

# QWERTY adjacency, the bundled "PC" layout.
KEYBOARD_LAYOUTS = {
    "PC": {
        "q": "wa", "w": "qes", "e": "wrd", "r": "etf", "t": "ryg", "y": "tuh",
        "u": "yij", "i": "uok", "o": "ipl", "p": "ol",
        "a": "qsz", "s": "awdx", "d": "sefc", "f": "drgv", "g": "fthb",
        "h": "gyjn", "j": "hukm", "k": "jil", "l": "kop",
        "z": "asx", "x": "zsdc", "c": "xdfv", "v": "cfgb", "b": "vghn",
        "n": "bhjm", "m": "njk",
    },
}

# Common spelling confusions: vowel drift and voiced/voiceless consonant slips.
ORTHOGRAPHIC_TABLE = {
    "a": "e", "e": "a", "i": "y", "y": "i", "o": "u", "u": "o",
    "c": "k", "k": "c", "s": "z", "z": "s", "b": "p", "p": "b",
    "d": "t", "t": "d", "m": "n", "n": "m", "f": "v", "v": "f",
}

EVENT_KINDS = ("case_flip", "orthographic", "keyboard", "deletion",
               "insertion", "repetition", "swap")


@dataclass(frozen=True)
class AugmentConfig:
    char_mod_probability: float = 0.3
    min_augs: int = 1
    max_augs: int = 5
    max_repetition: int = 3
    keyboard_layout: str = "PC"
    seed: int = 0

    def __post_init__(self) -> None:
        if not (0.0 <= self.char_mod_probability <= 1.0):
            raise ConfigurationError(
                f"char_mod_probability must lie in [0, 1], got {self.char_mod_probability}")
        if self.min_augs < 1:
            raise ConfigurationError(f"min_augs must be >= 1, got {self.min_augs}")
        if self.max_augs < self.min_augs:
            raise ConfigurationError(
                f"max_augs {self.max_augs} must be >= min_augs {self.min_augs}")
        if self.max_repetition < 1:
            raise ConfigurationError(f"max_repetition must be >= 1, got {self.max_repetition}")
        if self.keyboard_layout not in KEYBOARD_LAYOUTS:
            raise ConfigurationError(f"unknown keyboard layout {self.keyboard_layout!r}")


@dataclass
class AugmentEvent:
    kind: str
    word_index: int
    positions: list            # character offsets modified, at application time
    eligible_count: int        # positions the probability gate could have chosen


@dataclass
class TypoVariant:
    text: str
    events: list = field(default_factory=list)


def _max_run(word: str) -> int:
    longest, run = 0, 0
    prev = None
    for ch in word.lower():
        run = run + 1 if ch == prev else 1
        prev = ch
        longest = max(longest, run)
    return longest


def _match_case(template: str, ch: str) -> str:
    return ch.upper() if template.isupper() else ch


def _apply_single(word: str, kind: str, pos: int, rng, config: AugmentConfig):
    """Apply one edit at one position; None when the edit is no longer valid."""
    cap = config.max_repetition
    neighbors = KEYBOARD_LAYOUTS[config.keyboard_layout]
    ch = word[pos]
    low = ch.lower()
    if kind == "case_flip":
        if not ch.isalpha():
            return None
        return word[:pos] + ch.swapcase() + word[pos + 1:]
    if kind == "orthographic":
        if low not in ORTHOGRAPHIC_TABLE:
            return None
        out = word[:pos] + _match_case(ch, ORTHOGRAPHIC_TABLE[low]) + word[pos + 1:]
        return out if _max_run(out) <= cap else None
    if kind == "keyboard":
        if low not in neighbors:
            return None
        options = []
        for cand in neighbors[low]:
            out = word[:pos] + _match_case(ch, cand) + word[pos + 1:]
            if _max_run(out) <= cap:
                options.append(out)
        return options[int(rng.integers(0, len(options)))] if options else None
    if kind == "deletion":
        if len(word) < 2:
            return None
        out = word[:pos] + word[pos + 1:]
        return out if _max_run(out) <= cap else None
    if kind == "insertion":
        pool = neighbors.get(low, "") or string.ascii_lowercase
        options = []
        for cand in pool:
            out = word[:pos + 1] + _match_case(ch, cand) + word[pos + 1:]
            if _max_run(out) <= cap:
                options.append(out)
        return options[int(rng.integers(0, len(options)))] if options else None
    if kind == "repetition":
        out = word[:pos + 1] + ch + word[pos + 1:]
        return out if _max_run(out) <= cap else None
    if kind == "swap":
        if pos + 1 >= len(word) or word[pos].lower() == word[pos + 1].lower():
            return None
        out = word[:pos] + word[pos + 1] + word[pos] + word[pos + 2:]
        return out if _max_run(out) <= cap else None
    raise ConfigurationError(f"unknown event kind {kind!r}")


def _eligible_positions(word: str, kind: str, rng, config: AugmentConfig) -> list:
    return [p for p in range(len(word))
            if _apply_single(word, kind, p, rng, config) is not None]


def _run_event(words: list, rng, config: AugmentConfig) -> AugmentEvent:
    """Draw (kind, word) until an applicable pair comes up, then edit the word."""
    for _ in range(100):
        kind = EVENT_KINDS[int(rng.integers(0, len(EVENT_KINDS)))]
        widx = int(rng.integers(0, len(words)))
        eligible = _eligible_positions(words[widx], kind, rng, config)
        if eligible:
            break
    else:
        raise ValidationError("text offers no editable characters")

    gated = [p for p in eligible if rng.random() < config.char_mod_probability]
    if not gated:
        gated = [eligible[int(rng.integers(0, len(eligible)))]]

    applied = []
    word = words[widx]
    for pos in sorted(gated, reverse=True):  # right-to-left keeps offsets valid
        out = _apply_single(word, kind, pos, rng, config)
        if out is not None:  # earlier edits can retract a position's validity
            word = out
            applied.append(pos)
    if not applied:  # the first (rightmost) edit always lands, so this is unreachable
        raise ValidationError("augmentation event failed to modify the word")
    words[widx] = word
    return AugmentEvent(kind=kind, word_index=widx, positions=sorted(applied),
                        eligible_count=len(eligible))


def typo_augment(text: str, config: AugmentConfig, count: int = 6) -> list:
    """Produce `count` noisy variants of `text`, each logging its edit events.

    The default of six variants matches one lexical-augmentation panel.
    Whitespace is canonicalized to single spaces.
    """
    base = text.split()
    if not base:
        raise ValidationError("cannot augment empty text")
    if count < 1:
        raise ValidationError(f"count must be >= 1, got {count}")
    rng = np.random.default_rng(config.seed)
    variants = []
    for _ in range(count):
        words = list(base)
        n_events = int(rng.integers(config.min_augs, config.max_augs + 1))
        events = [_run_event(words, rng, config) for _ in range(n_events)]
        variants.append(TypoVariant(text=" ".join(words), events=events))
    return variants
