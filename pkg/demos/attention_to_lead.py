"""Where do later positions look while the sequence is being reconstructed?

Causal masking means position 0 (the e vector) can see only itself, so the
interesting direction is how much everyone else attends back to it.
"""
import numpy as np

from prototok.analysis import attention_to_e, layer_heatmap
from prototok.model import ModelConfig, forward, init_random_weights
from prototok.prototoken import TargetSequence, assemble_input, optimize_reconstruction

config = ModelConfig(hidden_size=32, num_layers=2, num_heads=4, mlp_hidden=64,
                     vocab_size=64, max_positions=12, seed=0)
weights = init_random_weights(config, attn_gain=3.0, final_gain=8.0)
target = TargetSequence(np.random.default_rng(9).integers(0, 64, size=10))

fit = optimize_reconstruction(weights, target, seed=2)
trace = forward(weights, assemble_input(fit.pair, len(target)), capture_attention=True)

att = attention_to_e(trace)          # (layers, heads, query position)
heatmap = layer_heatmap(att, layers=range(config.num_layers))

print("attention mass on e, averaged over heads (rows = layers):")
cols = "".join(f"  q{q:<4}" for q in range(len(target)))
print(f"{'':8}{cols}")
for layer in range(config.num_layers):
    row = "".join(f"{heatmap[layer, q]:>7.3f}" for q in range(len(target)))
    print(f"layer {layer:<2}{row}")

print("\nrow sums are 1 and query 0 attends to e alone:",
      bool(np.all(att[:, :, 0] == 1.0)))
