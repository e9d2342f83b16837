"""Build a labeled corpus: grammar sentences, typo variants, tokenized."""
import numpy as np

from prototok.datagen import (
    AugmentConfig,
    build_vocabulary,
    bundled_lexicon,
    generate_sentence,
    load_bundled_grammar,
    recognize,
    tokenize,
    typo_augment,
)
from prototok.datagen.grammar import GRAMMAR_CLASSES

lexicon = bundled_lexicon()
print(f"lexicon: {len(lexicon)} words\n")

sentences = []
for klass in GRAMMAR_CLASSES:
    grammar = load_bundled_grammar(klass)
    text, tokens = generate_sentence(grammar, lexicon, seed=11)
    sentences.append(text)
    ok = recognize(grammar, lexicon, tokens)
    print(f"{klass:<22} {text!r}  (re-parses: {ok})")

print("\ntypo variants of the first sentence:")
for variant in typo_augment(sentences[0], AugmentConfig(seed=3), count=4):
    kinds = ",".join(e.kind for e in variant.events)
    print(f"  {variant.text!r}  [{kinds}]")

vocab = build_vocabulary(sentences)
ids = tokenize(sentences[0], vocab)
print(f"\nvocabulary of {len(vocab)} tokens; first sentence -> {ids.tolist()}")
print("unknown words fall back to id 0:", tokenize("zzz unseen zzz", vocab).tolist())
