"""Anchor and relational objectives, and batch optimization with optional shared filler.

The anchor term pulls each lead vector toward a teacher embedding in cosine
distance. The relational term matches the pairwise cosine-similarity
structure of the lead vectors to that of the teachers, averaged over the
off-diagonal entries. Both come with hand-derived gradients so the whole
batch objective stays exactly differentiable end to end.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.stats import rankdata

from .errors import (
    ConfigurationError,
    DegenerateVectorError,
    NumericError,
    ShapeError,
    ValidationError,
)
from .model import ModelWeights, backward_to_inputs, forward
from .prototoken import (
    OptimizerConfig,
    ProtoTokenPair,
    StoppingCriteria,
    adamw_step,
    assemble_input,
    cross_entropy_with_gradient,
    decode,
    init_adamw_state,
    init_pair,
    token_accuracy,
)


@dataclass(frozen=True)
class TeacherEmbedding:
    """A reference vector the lead proto-token is regularized toward."""

    vector: np.ndarray
    source: str = ""

    def __post_init__(self) -> None:
        v = np.asarray(self.vector, dtype=np.float64)
        if v.ndim != 1:
            raise ShapeError(f"teacher vector must be 1-D, got shape {v.shape}")
        if not np.isfinite(v).all():
            raise ValidationError("teacher vector must be finite")
        if np.linalg.norm(v) == 0.0:
            raise DegenerateVectorError("teacher vector must be nonzero")
        v.setflags(write=False)
        object.__setattr__(self, "vector", v)


def _as_teacher_vector(t) -> np.ndarray:
    return t.vector if isinstance(t, TeacherEmbedding) else np.asarray(t, dtype=np.float64)


@dataclass(frozen=True)
class RegularizerConfig:
    lambda_anchor: float = 0.0
    lambda_rel: float = 0.0
    rel_kind: str = "mse"
    huber_delta: float = 1.0
    shared_m: bool = False
    batch_size: int = 6

    def __post_init__(self) -> None:
        if self.lambda_anchor < 0 or self.lambda_rel < 0:
            raise ConfigurationError("regularizer weights must be non-negative")
        if self.rel_kind not in ("mse", "huber"):
            raise ConfigurationError(f"rel_kind must be 'mse' or 'huber', got {self.rel_kind!r}")
        if self.rel_kind == "huber" and not self.huber_delta > 0:
            raise ConfigurationError(f"huber_delta must be positive, got {self.huber_delta}")
        if self.batch_size < 1:
            raise ConfigurationError(f"batch_size must be positive, got {self.batch_size}")
        if self.lambda_rel > 0 and self.batch_size < 2:
            raise ConfigurationError("relational term needs batch_size >= 2")


def cosine_similarity(u: np.ndarray, v: np.ndarray) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape or u.ndim != 1:
        raise ShapeError(f"vectors must be 1-D and equal length, got {u.shape} and {v.shape}")
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise DegenerateVectorError("cosine undefined for a zero vector")
    return float(np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0))


def anchor_loss(e: np.ndarray, teacher) -> float:
    """Cosine distance 1 - cos(e, t); 0 when collinear, 2 when antipodal."""
    return 1.0 - cosine_similarity(e, _as_teacher_vector(teacher))


def anchor_loss_with_gradient(e: np.ndarray, teacher):
    """Anchor loss and its gradient with respect to e."""
    e = np.asarray(e, dtype=np.float64)
    t = _as_teacher_vector(teacher)
    if e.shape != t.shape:
        raise ShapeError(f"dimension mismatch: e {e.shape} vs teacher {t.shape}")
    ne, nt = np.linalg.norm(e), np.linalg.norm(t)
    if ne == 0.0 or nt == 0.0:
        raise DegenerateVectorError("cosine undefined for a zero vector")
    cos = float(np.dot(e, t) / (ne * nt))
    grad = -(t / (ne * nt) - cos * e / (ne * ne))
    return 1.0 - min(1.0, max(-1.0, cos)), grad


def similarity_matrix(vectors) -> np.ndarray:
    """Pairwise cosine matrix of B row vectors: symmetric, unit diagonal."""
    arr = np.asarray(vectors, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 2:
        raise ShapeError(f"need at least two vectors in a 2-D stack, got shape {arr.shape}")
    norms = np.linalg.norm(arr, axis=1)
    for i, n in enumerate(norms):
        if n == 0.0:
            raise DegenerateVectorError(f"cosine undefined: vector {i} is zero")
    normed = arr / norms[:, None]
    sim = normed @ normed.T
    sim = np.clip((sim + sim.T) / 2.0, -1.0, 1.0)
    np.fill_diagonal(sim, 1.0)
    return sim


def _check_square_pair(s_e: np.ndarray, s_t: np.ndarray):
    s_e = np.asarray(s_e, dtype=np.float64)
    s_t = np.asarray(s_t, dtype=np.float64)
    if s_e.shape != s_t.shape or s_e.ndim != 2 or s_e.shape[0] != s_e.shape[1]:
        raise ShapeError(f"similarity matrices must be square and same size, got {s_e.shape} and {s_t.shape}")
    if s_e.shape[0] < 2:
        raise ShapeError("similarity matrices need at least two rows")
    return s_e, s_t


def relational_loss(s_e, s_t, kind: str = "mse", delta: float = 1.0) -> float:
    """Mean elementwise penalty over the off-diagonal similarity entries."""
    return relational_loss_with_gradient(s_e, s_t, kind=kind, delta=delta)[0]


def relational_loss_with_gradient(s_e, s_t, kind: str = "mse", delta: float = 1.0):
    """Relational loss and its gradient with respect to the student matrix."""
    s_e, s_t = _check_square_pair(s_e, s_t)
    b = s_e.shape[0]
    off = ~np.eye(b, dtype=bool)
    diff = s_e - s_t
    count = b * (b - 1)
    if kind == "mse":
        per_entry = diff * diff
        dper = 2.0 * diff
    elif kind == "huber":
        if not delta > 0:
            raise ConfigurationError(f"huber delta must be positive, got {delta}")
        absd = np.abs(diff)
        small = absd <= delta
        per_entry = np.where(small, 0.5 * diff * diff, delta * (absd - 0.5 * delta))
        dper = np.where(small, diff, delta * np.sign(diff))
    else:
        raise ConfigurationError(f"unknown relational kind {kind!r}")
    value = float(per_entry[off].sum() / count)
    grad = np.where(off, dper / count, 0.0)
    return value, grad


def similarity_gradient_to_vectors(vectors: np.ndarray, d_sim: np.ndarray) -> np.ndarray:
    """Chain an upstream gradient on the cosine matrix back to the vectors.

    d cos(v_i, v_j) / d v_i = v_j/(|v_i||v_j|) - cos_ij * v_i/|v_i|^2; entries
    (i, j) and (j, i) both contribute, so the upstream matrix is folded with
    its transpose.
    """
    arr = np.asarray(vectors, dtype=np.float64)
    norms = np.linalg.norm(arr, axis=1)
    normed = arr / norms[:, None]
    cos = normed @ normed.T
    g = np.asarray(d_sim, dtype=np.float64)
    gsum = g + g.T
    np.fill_diagonal(gsum, 0.0)  # diagonal of the cosine matrix is constant
    out = (gsum @ normed) / norms[:, None]
    out -= (gsum * cos).sum(axis=1)[:, None] * arr / (norms * norms)[:, None]
    return out


def offdiag_correlation(s_e, s_t, method: str = "pearson") -> float:
    """Correlation between the two matrices' off-diagonal entries."""
    s_e, s_t = _check_square_pair(s_e, s_t)
    off = ~np.eye(s_e.shape[0], dtype=bool)
    x, y = s_e[off], s_t[off]
    if method == "spearman":
        x, y = rankdata(x), rankdata(y)
    elif method != "pearson":
        raise ConfigurationError(f"unknown correlation method {method!r}")
    if np.ptp(x) == 0.0 or np.ptp(y) == 0.0:
        raise DegenerateVectorError("correlation undefined: off-diagonal entries have zero variance")
    return float(np.corrcoef(x, y)[0, 1])


@dataclass(frozen=True)
class LossBreakdown:
    ce: float
    anchor: float
    rel: float
    total: float
    lambda_anchor: float
    lambda_rel: float


def combined_loss(ce: float, anchor: float, rel: float, config: RegularizerConfig) -> LossBreakdown:
    for name, value in (("ce", ce), ("anchor", anchor), ("rel", rel)):
        if not math.isfinite(value):
            raise NumericError(f"{name} component is not finite: {value}")
    total = ce + config.lambda_anchor * anchor + config.lambda_rel * rel
    return LossBreakdown(ce=ce, anchor=anchor, rel=rel, total=total,
                         lambda_anchor=config.lambda_anchor, lambda_rel=config.lambda_rel)


# ---------------------------------------------------------------------------
# Batch objective and optimization
# ---------------------------------------------------------------------------

def _param_key_m(index: int, shared: bool) -> str:
    return "m" if shared else f"m.{index}"


def batch_objective_and_gradients(weights: ModelWeights, params: dict, targets,
                                  teachers, reg: RegularizerConfig):
    """Evaluate the full batch objective and its exact gradients.

    `params` maps 'e.<i>' (and 'm' or 'm.<i>') to vectors. Returns
    (breakdown, grads, details) where details carries per-example cross
    entropies, accuracies, logit traces, and teacher cosines.
    """
    b = len(targets)
    if len(teachers) != b:
        raise ShapeError(f"{b} targets but {len(teachers)} teachers")
    teacher_vecs = [_as_teacher_vector(t) for t in teachers]

    grads = {key: np.zeros_like(value) for key, value in params.items()}
    ce_values, accuracies, cos_values = [], [], []
    ce_total = 0.0
    for i, target in enumerate(targets):
        e = params[f"e.{i}"]
        m = params[_param_key_m(i, reg.shared_m)]
        block = assemble_input(ProtoTokenPair(e, m), len(target))
        trace = forward(weights, block)
        ce, dlogits = cross_entropy_with_gradient(trace.logits, target)
        grad = backward_to_inputs(weights, trace, dlogits)
        grads[f"e.{i}"] += grad[0]
        if len(target) > 1:
            grads[_param_key_m(i, reg.shared_m)] += grad[1:].sum(axis=0)
        ce_values.append(ce)
        ce_total += ce
        accuracies.append(token_accuracy(trace, target))
        cos_values.append(cosine_similarity(e, teacher_vecs[i]))

    anchor_total = 0.0
    if reg.lambda_anchor > 0:
        for i in range(b):
            value, grad_e = anchor_loss_with_gradient(params[f"e.{i}"], teacher_vecs[i])
            anchor_total += value
            grads[f"e.{i}"] += reg.lambda_anchor * grad_e
    else:
        anchor_total = sum(1.0 - c for c in cos_values)

    rel_value = 0.0
    if reg.lambda_rel > 0:
        if b < 2:
            raise ConfigurationError("relational term needs at least two examples")
        e_stack = np.stack([params[f"e.{i}"] for i in range(b)])
        s_e = similarity_matrix(e_stack)
        s_t = similarity_matrix(np.stack(teacher_vecs))
        rel_value, d_sim = relational_loss_with_gradient(s_e, s_t, kind=reg.rel_kind, delta=reg.huber_delta)
        d_vectors = similarity_gradient_to_vectors(e_stack, reg.lambda_rel * d_sim)
        for i in range(b):
            grads[f"e.{i}"] += d_vectors[i]

    breakdown = combined_loss(ce_total, anchor_total, rel_value, reg)
    details = {
        "ce_per_example": ce_values,
        "accuracies": accuracies,
        "cos_to_teacher": cos_values,
    }
    return breakdown, grads, details


@dataclass
class BatchStepRecord:
    step: int
    mean_accuracy: float
    accuracies: list
    ce: float                      # mean cross-entropy across the batch
    ce_per_example: list
    anchor: float                  # mean anchor term across the batch
    rel: float
    total: float
    offdiag_correlation: float     # nan when undefined (e.g. two examples)
    cos_to_teacher: list


@dataclass
class BatchResult:
    pairs: list
    records: list
    iterations_used: int
    converged: bool
    decoded: list
    final_correlation: float
    mean_step_correlation: float


def init_batch_params(weights: ModelWeights, b: int, reg: RegularizerConfig, seed: int,
                      teachers=None, init_from_teacher: bool = False) -> dict:
    """Per-example draws use seed+index so runs decompose example by example.

    Teacher-seeded leads start at the unit-normalized teacher direction;
    cosine objectives ignore magnitude, so only the direction carries
    information worth copying.
    """
    d = weights.config.hidden_size
    params = {}
    for i in range(b):
        teacher = None
        if init_from_teacher:
            if teachers is None:
                raise ConfigurationError("init_from_teacher requires teacher vectors")
            teacher = _as_teacher_vector(teachers[i])
            if teacher.shape != (d,):
                raise ShapeError(f"teacher {i} has shape {teacher.shape}, expected ({d},)")
            teacher = teacher / np.linalg.norm(teacher)
        pair = init_pair(d, seed + i, teacher=teacher)
        params[f"e.{i}"] = pair.e
        if not reg.shared_m:
            params[f"m.{i}"] = pair.m
        elif i == 0:
            params["m"] = pair.m
    return params


def optimize_batch(weights: ModelWeights, targets, teachers,
                   opt: Optional[OptimizerConfig] = None,
                   stop: Optional[StoppingCriteria] = None,
                   reg: Optional[RegularizerConfig] = None,
                   seed: int = 0,
                   init_from_teacher: bool = False) -> BatchResult:
    """Jointly fit one proto-token pair per example under the combined objective.

    Stops when the mean token accuracy across the batch reaches the
    threshold. Records per step: accuracies, loss components, the
    student/teacher similarity correlation, and each lead vector's cosine to
    its teacher.
    """
    opt = opt or OptimizerConfig()
    stop = stop or StoppingCriteria()
    reg = reg or RegularizerConfig()
    b = len(targets)
    if b != len(teachers):
        raise ShapeError(f"{b} targets but {len(teachers)} teachers")
    if b != reg.batch_size:
        raise ConfigurationError(f"config batch_size {reg.batch_size} != {b} provided examples")
    if reg.lambda_rel > 0 and b < 2:
        raise ConfigurationError("relational term needs at least two examples")
    for target in targets:
        target.validate_for(weights.config)

    params = init_batch_params(weights, b, reg, seed, teachers=teachers,
                               init_from_teacher=init_from_teacher)
    state = init_adamw_state(params)
    records = []
    converged = False

    s_t = None
    if b >= 2:
        s_t = similarity_matrix(np.stack([_as_teacher_vector(t) for t in teachers]))

    for step_index in range(1, stop.max_iterations + 1):
        try:
            breakdown, grads, details = batch_objective_and_gradients(weights, params, targets, teachers, reg)
        except NumericError as exc:
            raise NumericError(f"batch optimization aborted at step {step_index}: {exc}") from exc

        correlation = float("nan")
        if s_t is not None:
            s_e = similarity_matrix(np.stack([params[f"e.{i}"] for i in range(b)]))
            try:
                correlation = offdiag_correlation(s_e, s_t)
            except DegenerateVectorError:
                pass
        mean_acc = float(np.mean(details["accuracies"]))
        records.append(BatchStepRecord(
            step=step_index,
            mean_accuracy=mean_acc,
            accuracies=list(details["accuracies"]),
            ce=breakdown.ce / b,
            ce_per_example=list(details["ce_per_example"]),
            anchor=breakdown.anchor / b,
            rel=breakdown.rel,
            total=breakdown.total,
            offdiag_correlation=correlation,
            cos_to_teacher=list(details["cos_to_teacher"]),
        ))
        if mean_acc >= stop.accuracy_threshold:
            converged = True
            break
        if step_index == stop.max_iterations:
            break
        params, state = adamw_step(params, grads, state, opt, step_index)

    pairs = [ProtoTokenPair(e=params[f"e.{i}"].copy(),
                            m=params[_param_key_m(i, reg.shared_m)].copy())
             for i in range(b)]
    decoded = [decode(weights, pairs[i], len(targets[i])) for i in range(b)]
    correlations = [r.offdiag_correlation for r in records
                    if not math.isnan(r.offdiag_correlation)]
    return BatchResult(
        pairs=pairs,
        records=records,
        iterations_used=len(records),
        converged=converged,
        decoded=decoded,
        final_correlation=records[-1].offdiag_correlation if records else float("nan"),
        mean_step_correlation=float(np.mean(correlations)) if correlations else float("nan"),
    )


def save_batch_jsonl(result: BatchResult, path) -> None:
    """Per-step lines with batch summaries, then a footer with the final pairs."""
    with open(path, "w", encoding="utf-8") as f:
        for r in result.records:
            f.write(json.dumps({
                "step": r.step,
                "mean_accuracy": r.mean_accuracy,
                "ce": r.ce,
                "anchor": r.anchor,
                "rel": r.rel,
                "offdiag_correlation": None if math.isnan(r.offdiag_correlation) else r.offdiag_correlation,
                "cos_to_teacher": r.cos_to_teacher,
            }) + "\n")
        f.write(json.dumps({
            "final": True,
            "iterations_used": result.iterations_used,
            "converged": result.converged,
            "final_correlation": None if math.isnan(result.final_correlation) else result.final_correlation,
            "mean_step_correlation": None if math.isnan(result.mean_step_correlation) else result.mean_step_correlation,
            "decoded": [[int(x) for x in d] for d in result.decoded],
            "e": [[float(x) for x in p.e] for p in result.pairs],
            "m": [[float(x) for x in p.m] for p in result.pairs],
        }) + "\n")
