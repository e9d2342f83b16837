"""Context-free sentence templates: parsing, generation, and recognition.

Rule files use one production per line, `LHS -> alt | alt | ...`. Symbols on
the right-hand side are uppercase nonterminals, lowercase part-of-speech slot
names (filled from a lexicon bucket), or quoted literal words. `#` starts a
comment. The first left-hand side is the start symbol.

Seven sentence classes ship with the package, one rule file each:

    simple                  declarative, single clause
    complex                 two clauses joined by a conjunction
    simple_interrogative    auxiliary-fronted question
    complex_interrogative   question with a trailing clause
    simple_imperative       subjectless command
    complex_imperative      conjoined commands
    one_clause              bare noun phrase, no verb

The recognizer is a small Earley parser, so it handles any grammar this
module can load, ambiguous or not, without transformation.
"""

from __future__ import annotations

import importlib.resources
from dataclasses import dataclass

import numpy as np

from ..errors import GrammarError
from .lexicon import POS_TAGS, Lexicon

GRAMMAR_CLASSES = ("simple", "complex", "simple_interrogative",
                   "complex_interrogative", "simple_imperative",
                   "complex_imperative", "one_clause")

_MAX_DEPTH = 50


@dataclass(frozen=True)
class Symbol:
    kind: str   # "nonterminal" | "pos" | "literal"
    value: str


@dataclass(frozen=True)
class Grammar:
    klass: str
    start: str
    rules: dict  # nonterminal -> tuple of alternatives, each a tuple of Symbol


def _classify(token: str, origin: str, lineno: int) -> Symbol:
    if token.startswith("'") and token.endswith("'") and len(token) >= 3:
        return Symbol("literal", token[1:-1].lower())
    if token.isupper():
        return Symbol("nonterminal", token)
    if token.islower():
        if token not in POS_TAGS:
            raise GrammarError(
                f"{origin}:{lineno}: {token!r} is not a part-of-speech slot "
                f"(expected one of {', '.join(POS_TAGS)})")
        return Symbol("pos", token)
    raise GrammarError(f"{origin}:{lineno}: cannot classify symbol {token!r}")


def parse_grammar(text: str, klass: str, origin: str = "<string>") -> Grammar:
    rules = {}
    start = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "->" not in line:
            raise GrammarError(f"{origin}:{lineno}: missing '->' in rule {line!r}")
        lhs_text, rhs_text = line.split("->", 1)
        lhs = lhs_text.strip()
        if not lhs.isupper() or not lhs.isidentifier():
            raise GrammarError(f"{origin}:{lineno}: left-hand side {lhs!r} "
                               "must be an uppercase identifier")
        alternatives = []
        for alt_text in rhs_text.split("|"):
            tokens = alt_text.split()
            if not tokens:
                raise GrammarError(f"{origin}:{lineno}: empty alternative for {lhs}")
            alternatives.append(tuple(_classify(t, origin, lineno) for t in tokens))
        if start is None:
            start = lhs
        rules.setdefault(lhs, [])
        rules[lhs].extend(alternatives)
    if start is None:
        raise GrammarError(f"{origin}: no rules found")

    grammar = Grammar(klass=klass, start=start,
                      rules={k: tuple(v) for k, v in rules.items()})
    _validate(grammar, origin)
    return grammar


def _validate(grammar: Grammar, origin: str) -> None:
    for lhs, alternatives in grammar.rules.items():
        for alt in alternatives:
            for sym in alt:
                if sym.kind == "nonterminal" and sym.value not in grammar.rules:
                    raise GrammarError(
                        f"{origin}: nonterminal {sym.value!r} used by {lhs} is never defined")

    reachable = {grammar.start}
    frontier = [grammar.start]
    while frontier:
        for alt in grammar.rules[frontier.pop()]:
            for sym in alt:
                if sym.kind == "nonterminal" and sym.value not in reachable:
                    reachable.add(sym.value)
                    frontier.append(sym.value)
    unreachable = set(grammar.rules) - reachable
    if unreachable:
        raise GrammarError(f"{origin}: unreachable nonterminals: {sorted(unreachable)}")

    productive = set()
    changed = True
    while changed:
        changed = False
        for lhs, alternatives in grammar.rules.items():
            if lhs in productive:
                continue
            for alt in alternatives:
                if all(sym.kind != "nonterminal" or sym.value in productive
                       for sym in alt):
                    productive.add(lhs)
                    changed = True
                    break
    dead = set(grammar.rules) - productive
    if dead:
        raise GrammarError(f"{origin}: nonterminals cannot derive any sentence: {sorted(dead)}")


def load_grammar(path, klass: str) -> Grammar:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_grammar(fh.read(), klass=klass, origin=str(path))


def load_bundled_grammar(klass: str) -> Grammar:
    if klass not in GRAMMAR_CLASSES:
        raise GrammarError(f"unknown grammar class {klass!r}; "
                           f"bundled classes: {', '.join(GRAMMAR_CLASSES)}")
    resource = importlib.resources.files("prototok.datagen").joinpath(
        f"data/grammars/{klass}.cfg")
    return parse_grammar(resource.read_text(encoding="utf-8"), klass=klass,
                         origin=f"{klass}.cfg")


def generate_sentence(grammar: Grammar, lexicon: Lexicon, seed: int = 0):
    """Sample one sentence by uniform random leftmost derivation.

    Returns (text, tokens) where tokens includes any trailing punctuation as
    its own entry and text joins words with single spaces, attaching '?'
    directly to the final word.
    """
    rng = np.random.default_rng(seed)

    def expand(name: str, depth: int) -> list:
        if depth > _MAX_DEPTH:
            raise GrammarError(f"derivation exceeded depth {_MAX_DEPTH}; "
                               f"grammar {grammar.klass!r} likely recurses unboundedly")
        alternatives = grammar.rules[name]
        alt = alternatives[int(rng.integers(0, len(alternatives)))]
        out = []
        for sym in alt:
            if sym.kind == "nonterminal":
                out.extend(expand(sym.value, depth + 1))
            elif sym.kind == "pos":
                bucket = lexicon.words(sym.value)
                out.append(bucket[int(rng.integers(0, len(bucket)))])
            else:
                out.append(sym.value)
        return out

    tokens = expand(grammar.start, 0)
    for i, tok in enumerate(tokens[:-1]):
        if tok in ("a", "an"):  # article agreement; both words stay determiners
            tokens[i] = "an" if tokens[i + 1][0] in "aeiou" else "a"
    text = " ".join(tokens).replace(" ?", "?")
    return text, tokens


def split_sentence(text: str) -> list:
    """Invert generate_sentence's text form back into its token list."""
    tokens = []
    for word in text.split():
        if len(word) > 1 and word.endswith("?"):
            tokens.extend([word[:-1], "?"])
        else:
            tokens.append(word)
    return tokens


def _terminal_matches(sym: Symbol, token: str, lexicon: Lexicon) -> bool:
    if sym.kind == "pos":
        return token.lower() in lexicon.buckets[sym.value]
    return token.lower() == sym.value


def recognize(grammar: Grammar, lexicon: Lexicon, tokens) -> bool:
    """Earley recognition: does the token list belong to the grammar's language?"""
    tokens = list(tokens)
    n = len(tokens)
    # item: (lhs, alternative, dot, start)
    chart = [set() for _ in range(n + 1)]
    for alt in grammar.rules[grammar.start]:
        chart[0].add((grammar.start, alt, 0, 0))

    for i in range(n + 1):
        queue = list(chart[i])
        while queue:
            item = queue.pop()
            lhs, alt, dot, start = item
            if dot == len(alt):
                # complete: advance every parent waiting on lhs at `start`
                for parent in list(chart[start]):
                    plhs, palt, pdot, pstart = parent
                    if pdot < len(palt) and palt[pdot].kind == "nonterminal" \
                            and palt[pdot].value == lhs:
                        advanced = (plhs, palt, pdot + 1, pstart)
                        if advanced not in chart[i]:
                            chart[i].add(advanced)
                            queue.append(advanced)
                continue
            sym = alt[dot]
            if sym.kind == "nonterminal":
                for sub in grammar.rules[sym.value]:
                    predicted = (sym.value, sub, 0, i)
                    if predicted not in chart[i]:
                        chart[i].add(predicted)
                        queue.append(predicted)
            elif i < n and _terminal_matches(sym, tokens[i], lexicon):
                chart[i + 1].add((lhs, alt, dot + 1, start))

    return any(lhs == grammar.start and dot == len(alt) and start == 0
               for lhs, alt, dot, start in chart[n])
