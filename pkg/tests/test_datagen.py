import json
import re

import numpy as np
import pytest

from prototok.datagen import (
    GRAMMAR_CLASSES,
    AugmentConfig,
    CorpusRecord,
    Vocabulary,
    build_vocabulary,
    bundled_lexicon,
    detokenize,
    generate_sentence,
    load_bundled_grammar,
    load_corpus_jsonl,
    load_lexicon,
    load_paraphrases,
    load_vocabulary,
    parse_grammar,
    recognize,
    save_corpus_jsonl,
    save_lexicon,
    save_vocabulary,
    split_sentence,
    tokenize,
    typo_augment,
)
from prototok.datagen.lexicon import POS_TAGS
from prototok.datagen.tokenizer import split_tokens
from prototok.errors import ConfigurationError, GrammarError, ValidationError

SAMPLE = "the quick brown fox jumps over the lazy dog"


def longest_run(word):
    return max((len(m.group(0)) for m in re.finditer(r"(.)\1*", word.lower())),
               default=0)


# ---------------------------------------------------------------- augmenter


def test_augment_event_budget_and_run_cap():
    """Every variant logs 1..5 events and never exceeds 3 repeated letters."""
    for seed in range(30):
        for variant in typo_augment(SAMPLE, AugmentConfig(seed=seed)):
            assert 1 <= len(variant.events) <= 5
            assert variant.text != ""
            for word in variant.text.split():
                assert longest_run(word) <= 3, (variant.text, word)
            for event in variant.events:
                assert len(event.positions) >= 1
                assert event.eligible_count >= len(event.positions)
                assert 0 <= event.word_index < len(SAMPLE.split())


def test_augment_default_count_is_six():
    assert len(typo_augment(SAMPLE, AugmentConfig())) == 6
    assert len(typo_augment(SAMPLE, AugmentConfig(), count=2)) == 2


def test_augment_modification_rate_near_target():
    """Aggregate modified/eligible tracks char_mod_probability.

    The floor of one forced modification per event biases the ratio upward
    on short words, so the gate is a band around 0.3 rather than a point.
    """
    modified = eligible = 0
    for seed in range(60):
        for variant in typo_augment(SAMPLE + " and then sleeps",
                                    AugmentConfig(seed=seed), count=5):
            for event in variant.events:
                modified += len(event.positions)
                eligible += event.eligible_count
    assert eligible >= 1000
    assert 0.2 <= modified / eligible <= 0.4


def test_augment_rate_is_monotone_in_probability():
    def rate(p):
        modified = eligible = 0
        for seed in range(40):
            cfg = AugmentConfig(seed=seed, char_mod_probability=p)
            for variant in typo_augment(SAMPLE, cfg, count=4):
                for event in variant.events:
                    modified += len(event.positions)
                    eligible += event.eligible_count
        return modified / eligible

    assert rate(0.1) < rate(0.5) < rate(0.9)


def test_augment_deterministic_per_seed():
    a = typo_augment(SAMPLE, AugmentConfig(seed=7))
    b = typo_augment(SAMPLE, AugmentConfig(seed=7))
    assert [v.text for v in a] == [v.text for v in b]
    c = typo_augment(SAMPLE, AugmentConfig(seed=8))
    assert [v.text for v in a] != [v.text for v in c]


def test_augment_actually_changes_text():
    changed = sum(v.text != SAMPLE
                  for v in typo_augment(SAMPLE, AugmentConfig(seed=0), count=20))
    assert changed == 20


def test_augment_config_validation():
    with pytest.raises(ConfigurationError):
        AugmentConfig(min_augs=0, max_augs=0)
    with pytest.raises(ConfigurationError):
        AugmentConfig(min_augs=4, max_augs=2)
    with pytest.raises(ConfigurationError):
        AugmentConfig(char_mod_probability=1.5)
    with pytest.raises(ConfigurationError):
        AugmentConfig(keyboard_layout="DVORAK")
    with pytest.raises(ValidationError):
        typo_augment("   ", AugmentConfig())


def test_augment_tight_repetition_cap():
    for variant in typo_augment("bookkeeper assess", AugmentConfig(seed=1, max_repetition=2),
                                count=12):
        for word in variant.text.split():
            assert longest_run(word) <= 2, variant.text


# ----------------------------------------------------------------- lexicon


def test_bundled_lexicon_covers_all_tags():
    lex = bundled_lexicon()
    assert len(lex) >= 200
    for tag in POS_TAGS:
        assert len(lex.words(tag)) >= 5
    assert lex.tag_of("dog") == "noun"
    assert lex.tag_of("watch") == "verb"
    assert lex.tag_of("zzz") is None


def test_lexicon_round_trip(tmp_path):
    lex = bundled_lexicon()
    path = tmp_path / "words.tsv"
    save_lexicon(lex, path)
    again = load_lexicon(path)
    assert again.buckets == lex.buckets
    assert again.ranks == lex.ranks


def test_lexicon_rejects_bad_rows(tmp_path):
    cases = [
        "dog\tnoun\t1\ndog\tverb\t2\n",        # duplicate word
        "dog\tnoun\t1\nrun\tverbish\t2\n",     # unknown tag
        "dog\tnoun\tfirst\n",                  # non-integer rank
        "dog noun 1\n",                        # wrong separator
    ]
    for body in cases:
        path = tmp_path / "bad.tsv"
        path.write_text(body)
        with pytest.raises(ValidationError):
            load_lexicon(path)


def test_lexicon_requires_every_bucket(tmp_path):
    path = tmp_path / "thin.tsv"
    path.write_text("dog\tnoun\t1\nrun\tverb\t2\n")
    with pytest.raises(ValidationError):
        load_lexicon(path)


# ----------------------------------------------------------------- grammar


def test_all_classes_generate_and_reparse():
    """Whatever a grammar generates, its recognizer must accept."""
    lex = bundled_lexicon()
    for klass in GRAMMAR_CLASSES:
        grammar = load_bundled_grammar(klass)
        for seed in range(60):
            text, tokens = generate_sentence(grammar, lex, seed=seed)
            assert split_sentence(text) == tokens, (klass, text)
            assert recognize(grammar, lex, tokens), (klass, text)


def test_class_shapes():
    lex = bundled_lexicon()
    verbs = set(lex.words("verb"))
    adverbs = set(lex.words("adverb"))
    for klass in ("simple_interrogative", "complex_interrogative"):
        grammar = load_bundled_grammar(klass)
        for seed in range(40):
            text, tokens = generate_sentence(grammar, lex, seed=seed)
            assert text.endswith("?") and tokens[-1] == "?", (klass, text)
    for klass in ("simple_imperative", "complex_imperative"):
        grammar = load_bundled_grammar(klass)
        for seed in range(40):
            _, tokens = generate_sentence(grammar, lex, seed=seed)
            assert tokens[0] in verbs | adverbs, (klass, tokens)
    grammar = load_bundled_grammar("one_clause")
    for seed in range(40):
        _, tokens = generate_sentence(grammar, lex, seed=seed)
        assert not any(t in verbs for t in tokens), tokens


def test_generation_is_seed_deterministic():
    lex = bundled_lexicon()
    grammar = load_bundled_grammar("complex")
    assert generate_sentence(grammar, lex, seed=5) == generate_sentence(grammar, lex, seed=5)
    assert generate_sentence(grammar, lex, seed=5) != generate_sentence(grammar, lex, seed=6)


def test_recognize_rejects_word_salad():
    lex = bundled_lexicon()
    grammar = load_bundled_grammar("simple")
    assert not recognize(grammar, lex, ["dog", "the", "run"])
    assert not recognize(grammar, lex, ["the", "dog"])          # needs a verb phrase
    assert recognize(grammar, lex, ["the", "dog", "runs"]) is False  # inflection unknown
    assert recognize(grammar, lex, ["the", "dog", "run"])


def test_grammar_parse_errors():
    with pytest.raises(GrammarError):
        parse_grammar("S -> NP\n", klass="simple")               # NP undefined
    with pytest.raises(GrammarError):
        parse_grammar("S -> noun\nX -> verb\n", klass="simple")  # X unreachable
    with pytest.raises(GrammarError):
        parse_grammar("S -> S noun\n", klass="simple")           # nothing derivable
    with pytest.raises(GrammarError):
        parse_grammar("S -> nounish\n", klass="simple")          # bad slot name
    with pytest.raises(GrammarError):
        parse_grammar("S noun\n", klass="simple")                # missing arrow
    with pytest.raises(GrammarError):
        parse_grammar("", klass="simple")
    with pytest.raises(GrammarError):
        load_bundled_grammar("compound")


def test_article_agreement():
    lex = bundled_lexicon()
    grammar = load_bundled_grammar("simple")
    for seed in range(200):
        _, tokens = generate_sentence(grammar, lex, seed=seed)
        for a, b in zip(tokens, tokens[1:]):
            if a == "a":
                assert b[0] not in "aeiou", tokens
            elif a == "an":
                assert b[0] in "aeiou", tokens


# ------------------------------------------------------------------ corpus


def test_corpus_round_trip(tmp_path):
    records = [
        CorpusRecord("r0", "the dog runs", label="dogs"),
        CorpusRecord("r0/t1", "teh dog runs", label="dogs", variant="lexical",
                     source_id="r0"),
        CorpusRecord("r0/s0", "a dog is running", label="dogs", variant="semantic",
                     source_id="r0"),
    ]
    path = tmp_path / "corpus.jsonl"
    save_corpus_jsonl(records, path)
    assert load_corpus_jsonl(path) == records


def test_corpus_validation(tmp_path):
    with pytest.raises(ValidationError):
        CorpusRecord("r0", "")
    with pytest.raises(ValidationError):
        CorpusRecord("r0", "text", variant="noisy")
    path = tmp_path / "dup.jsonl"
    path.write_text('{"id": "a", "text": "x"}\n{"id": "a", "text": "y"}\n')
    with pytest.raises(ValidationError):
        load_corpus_jsonl(path)
    path.write_text('{"text": "x"}\n')
    with pytest.raises(ValidationError):
        load_corpus_jsonl(path)


def test_paraphrase_loading(tmp_path):
    """Two sources with nine paraphrases each become 18 linked records."""
    table = {
        "dogs": [f"dog sentence {k}" for k in range(9)],
        "cats": [f"cat sentence {k}" for k in range(9)],
    }
    path = tmp_path / "para.json"
    path.write_text(json.dumps(table))
    records = load_paraphrases(path)
    assert len(records) == 18
    assert all(r.variant == "semantic" for r in records)
    dogs = [r for r in records if r.label == "dogs"]
    assert len(dogs) == 9
    assert dogs[0].record_id == "dogs/s0"
    assert dogs[0].source_id == "dogs"
    path.write_text(json.dumps({"dogs": []}))
    with pytest.raises(ValidationError):
        load_paraphrases(path)
    path.write_text(json.dumps({"dogs": ["ok", "  "]}))
    with pytest.raises(ValidationError):
        load_paraphrases(path)


# --------------------------------------------------------------- tokenizer


def test_vocabulary_matches_independent_count():
    texts = ["the dog runs", "the cat sleeps", "does the dog run ?"]
    counts = {}
    for text in texts:
        for tok in split_tokens(text):
            counts[tok] = counts.get(tok, 0) + 1
    vocab = build_vocabulary(texts)
    assert len(vocab) == len(counts) + 1
    assert vocab.tokens[0] == "<unk>"
    assert vocab.tokens[1] == "the"  # highest frequency wins the lowest id
    ranked = sorted(counts, key=lambda t: (-counts[t], t))
    assert list(vocab.tokens[1:]) == ranked


def test_tokenize_round_trip():
    vocab = build_vocabulary(["the dog runs fast", "the cat naps"])
    text = "the cat runs"
    ids = tokenize(text, vocab)
    assert ids.dtype == np.int64
    assert detokenize(ids, vocab) == text
    assert detokenize(tokenize("does the dog run?", vocab), vocab).count("<unk>") == 3


def test_tokenize_empty_and_unknown():
    vocab = build_vocabulary(["a b"])
    assert tokenize("", vocab).shape == (0,)
    assert tokenize("zebra", vocab).tolist() == [0]
    with pytest.raises(ValidationError):
        vocab.token_of(99)
    with pytest.raises(ValidationError):
        vocab.token_of(-1)


def test_vocabulary_size_cap_and_io(tmp_path):
    vocab = build_vocabulary(["a a a b b c"], max_size=3)
    assert len(vocab) == 3
    assert vocab.tokens == ("<unk>", "a", "b")
    path = tmp_path / "vocab.json"
    save_vocabulary(vocab, path)
    assert load_vocabulary(path).tokens == vocab.tokens
    with pytest.raises(ValidationError):
        Vocabulary(tokens=("a", "<unk>"))
    with pytest.raises(ValidationError):
        Vocabulary(tokens=("<unk>", "a", "a"))
