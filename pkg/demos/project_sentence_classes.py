"""Do lead vectors carry anything about the text? Project them and look.

Reconstructs short sentences from three grammar classes on a small model,
anchoring each lead vector toward a bag-of-words teacher, then runs the
exact t-SNE on the learned e vectors. Teachers of same-class sentences
correlate only through shared words, so separation is partial at best;
the within/between cosine gap printed at the end is the honest number,
the 2-D coordinates are for eyeballing.
"""
import numpy as np

from prototok.analysis import default_projection_config, tsne_project
from prototok.datagen import build_vocabulary, bundled_lexicon, generate_sentence, load_bundled_grammar
from prototok.datagen.tokenizer import tokenize
from prototok.model import ModelConfig, init_random_weights
from prototok.prototoken import TargetSequence
from prototok.regularizers import RegularizerConfig, optimize_batch
from prototok.teacher import synthetic_embedding

config = ModelConfig(hidden_size=32, num_layers=1, num_heads=4, mlp_hidden=64,
                     vocab_size=128, max_positions=16, seed=0)
weights = init_random_weights(config, attn_gain=3.0, final_gain=8.0)
lexicon = bundled_lexicon()

classes = ("simple", "simple_interrogative", "one_clause")
texts, labels = [], []
for klass in classes:
    grammar = load_bundled_grammar(klass)
    for seed in range(4):
        texts.append(generate_sentence(grammar, lexicon, seed=seed)[0])
        labels.append(klass)

vocab = build_vocabulary(texts, max_size=128)
targets = [TargetSequence(tokenize(t, vocab)) for t in texts]
teachers = [synthetic_embedding(t, d=32, seed=0) for t in texts]

# anchored so that lead vectors inherit the teachers' content structure
reg = RegularizerConfig(lambda_anchor=0.5, batch_size=len(targets))
result = optimize_batch(weights, targets, teachers, reg=reg, seed=0,
                        init_from_teacher=True)
print(f"batch of {len(targets)}: mean accuracy "
      f"{result.records[-1].mean_accuracy:.3f} after {result.iterations_used} steps")

leads = np.stack([p.e for p in result.pairs])
projection = tsne_project(leads, default_projection_config(len(leads), seed=1))
print(f"projection KL {projection.kl_divergence:.3f}\n")
for klass in classes:
    print(klass)
    for text, label, (x, y) in zip(texts, labels, projection.points):
        if label == klass:
            print(f"  ({x:7.2f}, {y:7.2f})  {text}")

same = np.array([[a == b for b in labels] for a in labels])
off = ~np.eye(len(labels), dtype=bool)

def gap(vectors):
    unit = vectors / np.linalg.norm(vectors, axis=1, keepdims=True)
    cos = unit @ unit.T
    return cos[same & off].mean(), cos[~same].mean()

t_same, t_other = gap(np.stack(teachers))
l_same, l_other = gap(leads)
print(f"\nmean cosine  teachers: same class {t_same:+.3f} vs other {t_other:+.3f}")
print(f"mean cosine  learned leads: same class {l_same:+.3f} vs other {l_other:+.3f}")
