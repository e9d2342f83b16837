"""Pull the lead vector toward a teacher embedding and watch what it costs.

Runs the same reconstruction three times with anchor weights 0, 0.02 and 0.5.
The lead vector starts at the teacher; a stronger anchor keeps it there at
the price of slower (sometimes failed) convergence.
"""
import numpy as np

from prototok.model import ModelConfig, init_random_weights
from prototok.prototoken import TargetSequence
from prototok.regularizers import RegularizerConfig, optimize_batch

config = ModelConfig(hidden_size=64, num_layers=2, num_heads=4, mlp_hidden=128,
                     vocab_size=256, max_positions=32, seed=0)
weights = init_random_weights(config, attn_gain=3.0, final_gain=8.0)

target = TargetSequence(np.random.default_rng(504).integers(0, 256, size=16))
teacher = np.random.default_rng(1004).normal(size=64)
teacher /= np.linalg.norm(teacher)

print(f"{'anchor weight':>13} {'steps':>6} {'accuracy':>9} {'cos to teacher':>15}")
for lam in (0.0, 0.02, 0.5):
    reg = RegularizerConfig(lambda_anchor=lam, batch_size=1)
    result = optimize_batch(weights, [target], [teacher], reg=reg, seed=4,
                            init_from_teacher=True)
    last = result.records[-1]
    print(f"{lam:>13} {result.iterations_used:>6} {last.accuracies[0]:>9.3f} "
          f"{last.cos_to_teacher[0]:>15.3f}")
