"""Corpus production: typo augmentation, CFG sentence generation, paraphrase
ingestion, lexicon handling, and a word-level tokenizer."""

from .augment import AugmentConfig, AugmentEvent, TypoVariant, typo_augment
from .corpus import (
    CorpusRecord,
    load_corpus_jsonl,
    load_paraphrases,
    save_corpus_jsonl,
)
from .grammar import (
    GRAMMAR_CLASSES,
    Grammar,
    generate_sentence,
    load_bundled_grammar,
    load_grammar,
    parse_grammar,
    recognize,
    split_sentence,
)
from .lexicon import POS_TAGS, Lexicon, bundled_lexicon, load_lexicon, save_lexicon
from .tokenizer import (
    Vocabulary,
    build_vocabulary,
    detokenize,
    load_vocabulary,
    save_vocabulary,
    tokenize,
)

__all__ = [
    "AugmentConfig", "AugmentEvent", "TypoVariant", "typo_augment",
    "CorpusRecord", "load_corpus_jsonl", "load_paraphrases", "save_corpus_jsonl",
    "GRAMMAR_CLASSES", "Grammar", "generate_sentence", "load_bundled_grammar",
    "load_grammar", "parse_grammar", "recognize", "split_sentence",
    "POS_TAGS", "Lexicon", "bundled_lexicon", "load_lexicon", "save_lexicon",
    "Vocabulary", "build_vocabulary", "detokenize", "load_vocabulary",
    "save_vocabulary", "tokenize",
]
