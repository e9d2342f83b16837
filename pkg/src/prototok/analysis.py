"""Attention-to-lead-token extraction and exact 2-D t-SNE projection.

The attention helpers slice how every query position attends back to key
position 0 (where the lead vector sits). The projector is a from-scratch,
all-pairs t-SNE: per-point Gaussian bandwidths found by bisection against a
target perplexity, symmetrized affinities, Student-t low-dimensional
kernel, and a momentum gradient descent on the KL objective with an early
exaggeration phase. Exact and deterministic, sized for a few hundred points.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConfigurationError, MissingDataError
from .model import ForwardTrace


# ---------------------------------------------------------------------------
# Attention to the lead token
# ---------------------------------------------------------------------------

def attention_to_e(trace: ForwardTrace) -> np.ndarray:
    """Slice attention onto key position 0: shape (layers, heads, query positions)."""
    if trace.attention is None:
        raise MissingDataError("trace has no attention tensor; run forward with capture_attention=True")
    return np.ascontiguousarray(trace.attention[:, :, :, 0])


def mean_attention_over_heads(att: np.ndarray, layer: int) -> np.ndarray:
    """Arithmetic mean over heads at one layer, one value per query position."""
    att = np.asarray(att)
    if not (0 <= layer < att.shape[0]):
        raise IndexError(f"layer {layer} out of range for {att.shape[0]} layers")
    return att[layer].mean(axis=0)


def layer_heatmap(att: np.ndarray, layers) -> np.ndarray:
    """Stack head-averaged rows for the requested layers, in the given order."""
    return np.stack([mean_attention_over_heads(att, layer) for layer in layers])


def save_heatmap_csv(matrix: np.ndarray, layers, path) -> None:
    matrix = np.asarray(matrix)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["layer"] + [f"pos_{j}" for j in range(matrix.shape[1])])
        for layer, row in zip(layers, matrix):
            writer.writerow([layer] + [float(v) for v in row])


# ---------------------------------------------------------------------------
# Exact t-SNE
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ProjectionConfig:
    """Settings for the exact t-SNE descent.

    The descent starts at momentum min(0.5, momentum) and switches to the
    full value when early exaggeration ends; momentum 0 gives plain gradient
    descent throughout.
    """

    perplexity: float = 30.0
    iterations: int = 1000
    learning_rate: float = 200.0
    momentum: float = 0.8
    early_exaggeration: float = 12.0
    exaggeration_iters: int = 250
    seed: int = 0

    def __post_init__(self) -> None:
        if not self.perplexity > 1:
            raise ConfigurationError(f"perplexity must exceed 1, got {self.perplexity}")
        if self.iterations < 1:
            raise ConfigurationError(f"iterations must be >= 1, got {self.iterations}")
        if not self.learning_rate > 0:
            raise ConfigurationError(f"learning_rate must be positive, got {self.learning_rate}")
        if not (0.0 <= self.momentum < 1.0):
            raise ConfigurationError(f"momentum must lie in [0, 1), got {self.momentum}")
        if not self.early_exaggeration >= 1.0:
            raise ConfigurationError(f"early_exaggeration must be >= 1, got {self.early_exaggeration}")
        if self.exaggeration_iters < 0:
            raise ConfigurationError(f"exaggeration_iters must be >= 0, got {self.exaggeration_iters}")


def default_projection_config(n_points: int, seed: int = 0) -> ProjectionConfig:
    """Perplexity 30 capped at (N-1)/3 so small panels stay calibratable."""
    perplexity = min(30.0, (n_points - 1) / 3.0)
    return ProjectionConfig(perplexity=max(perplexity, 1.0 + 1e-9), seed=seed)


@dataclass
class Projection2D:
    points: np.ndarray            # (N, 2)
    kl_divergence: float
    kl_history: list
    achieved_perplexities: np.ndarray
    degenerate: bool


def _pairwise_sq_dists(x: np.ndarray) -> np.ndarray:
    sq = np.sum(x * x, axis=1)
    d = sq[:, None] + sq[None, :] - 2.0 * (x @ x.T)
    np.fill_diagonal(d, 0.0)
    return np.maximum(d, 0.0)


def _entropy_and_probs(dist_row: np.ndarray, beta: float):
    # Entropy in nats of p_j ∝ exp(-beta d_j) over j != i, computed stably.
    shifted = dist_row - dist_row.min()
    w = np.exp(-beta * shifted)
    total = w.sum()
    p = w / total
    entropy = float(beta * np.dot(p, shifted) + math.log(total))
    return entropy, p

_ENTROPY_TOL = 1e-9
_BISECTION_STEPS = 200


def calibrate_affinities(vectors: np.ndarray, perplexity: float):
    """Per-point bandwidth search hitting the target perplexity by bisection.

    Returns (conditional probability matrix with zero diagonal, achieved
    perplexities). Perplexity is exp of the row entropy in nats.
    """
    n = vectors.shape[0]
    dists = _pairwise_sq_dists(vectors)
    target = math.log(perplexity)
    cond = np.zeros((n, n))
    achieved = np.zeros(n)
    idx = np.arange(n)
    for i in range(n):
        row = dists[i, idx != i]
        lo, hi = 0.0, math.inf
        beta = 1.0
        entropy, p = _entropy_and_probs(row, beta)
        for _ in range(_BISECTION_STEPS):
            if abs(entropy - target) < _ENTROPY_TOL:
                break
            if entropy > target:
                lo = beta
                beta = beta * 2.0 if math.isinf(hi) else (beta + hi) / 2.0
            else:
                hi = beta
                beta = (lo + beta) / 2.0
            entropy, p = _entropy_and_probs(row, beta)
        cond[i, idx != i] = p
        achieved[i] = math.exp(entropy)
    return cond, achieved


def joint_affinities(vectors: np.ndarray, perplexity: float):
    """Symmetrized input affinities P (sums to 1) plus achieved perplexities."""
    cond, achieved = calibrate_affinities(vectors, perplexity)
    n = vectors.shape[0]
    return (cond + cond.T) / (2.0 * n), achieved


def _student_t_affinities(y: np.ndarray):
    num = 1.0 / (1.0 + _pairwise_sq_dists(y))
    np.fill_diagonal(num, 0.0)
    return num / num.sum(), num


def _kl_divergence(p: np.ndarray, q: np.ndarray) -> float:
    q_safe = np.maximum(q, 1e-12)
    terms = np.where(p > 0.0, p * np.log(np.maximum(p, 1e-300) / q_safe), 0.0)
    return float(terms.sum())


def tsne_project(vectors: np.ndarray, config: Optional[ProjectionConfig] = None) -> Projection2D:
    """Project N x D vectors to 2-D; deterministic for a fixed config."""
    x = np.asarray(vectors, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 3:
        raise ConfigurationError(f"need at least 3 points in a 2-D array, got shape {x.shape}")
    n = x.shape[0]
    config = config or default_projection_config(n)
    if config.perplexity >= n:
        raise ConfigurationError(f"perplexity {config.perplexity} must be below the point count {n}")

    rng = np.random.default_rng(config.seed)
    y = rng.normal(0.0, 1e-4, size=(n, 2))

    if np.max(_pairwise_sq_dists(x)) == 0.0:
        # All inputs identical: affinities carry no structure worth descending.
        return Projection2D(points=y, kl_divergence=float("nan"), kl_history=[],
                            achieved_perplexities=np.full(n, n - 1.0), degenerate=True)

    p, achieved = joint_affinities(x, config.perplexity)
    velocity = np.zeros_like(y)
    kl_history = []
    for iteration in range(1, config.iterations + 1):
        exaggerating = iteration <= config.exaggeration_iters
        p_eff = p * config.early_exaggeration if exaggerating else p
        q, num = _student_t_affinities(y)
        pq = (p_eff - q) * num
        grad = 4.0 * ((np.diag(pq.sum(axis=1)) - pq) @ y)
        momentum = min(0.5, config.momentum) if exaggerating else config.momentum
        velocity = momentum * velocity - config.learning_rate * grad
        y = y + velocity
        kl_history.append(_kl_divergence(p, q))

    q_final, _ = _student_t_affinities(y)
    return Projection2D(points=y, kl_divergence=_kl_divergence(p, q_final),
                        kl_history=kl_history, achieved_perplexities=achieved,
                        degenerate=False)


def save_projection_csv(projection: Projection2D, path, ids=None, labels=None) -> None:
    n = projection.points.shape[0]
    ids = list(range(n)) if ids is None else list(ids)
    labels = [""] * n if labels is None else list(labels)
    if len(ids) != n or len(labels) != n:
        raise ConfigurationError(f"ids/labels must have {n} entries")
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["id", "x", "y", "label"])
        for i in range(n):
            writer.writerow([ids[i], float(projection.points[i, 0]),
                             float(projection.points[i, 1]), labels[i]])
