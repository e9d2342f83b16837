"""Proto-token assembly, the reconstruction objective, and its optimizer loop.

Two learnable vectors are trained against a frozen model: a lead vector whose
logits predict the first target token, and a shared filler vector repeated for
the remaining positions. Row j of the logits predicts target token j.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import (
    ConfigurationError,
    NumericError,
    ShapeError,
    ValidationError,
)
from .model import ModelWeights, backward_to_inputs, forward


@dataclass(frozen=True)
class TargetSequence:
    """Integer token ids to reconstruct."""

    tokens: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.tokens, dtype=np.int64)
        if arr.ndim != 1 or arr.shape[0] < 1:
            raise ValidationError(f"tokens must be a non-empty 1-D sequence, got shape {arr.shape}")
        if (arr < 0).any():
            raise ValidationError("token ids must be non-negative")
        arr.setflags(write=False)
        object.__setattr__(self, "tokens", arr)

    def __len__(self) -> int:
        return int(self.tokens.shape[0])

    def validate_for(self, config) -> None:
        if len(self) > config.max_positions:
            raise ValidationError(
                f"sequence length {len(self)} exceeds model max_positions {config.max_positions}"
            )
        if int(self.tokens.max()) >= config.vocab_size:
            raise ValidationError(
                f"token id {int(self.tokens.max())} out of range for vocab_size {config.vocab_size}"
            )


@dataclass
class ProtoTokenPair:
    """The two optimized vectors: lead `e` and repeated filler `m`."""

    e: np.ndarray
    m: np.ndarray

    def __post_init__(self) -> None:
        self.e = np.asarray(self.e, dtype=np.float64)
        self.m = np.asarray(self.m, dtype=np.float64)
        if self.e.ndim != 1 or self.m.ndim != 1 or self.e.shape != self.m.shape:
            raise ShapeError(f"e and m must be 1-D vectors of equal size, got {self.e.shape} and {self.m.shape}")
        if not (np.isfinite(self.e).all() and np.isfinite(self.m).all()):
            raise ValidationError("proto-token vectors must be finite")

    @property
    def dim(self) -> int:
        return int(self.e.shape[0])

    def copy(self) -> "ProtoTokenPair":
        return ProtoTokenPair(e=self.e.copy(), m=self.m.copy())


@dataclass(frozen=True)
class OptimizerConfig:
    learning_rate: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.9
    weight_decay: float = 0.01
    epsilon: float = 1e-8

    def __post_init__(self) -> None:
        if not self.learning_rate > 0:
            raise ConfigurationError(f"learning_rate must be positive, got {self.learning_rate}")
        for name in ("beta1", "beta2"):
            b = getattr(self, name)
            if not (0.0 <= b < 1.0):
                raise ConfigurationError(f"{name} must lie in [0, 1), got {b}")
        if self.weight_decay < 0:
            raise ConfigurationError(f"weight_decay must be non-negative, got {self.weight_decay}")
        if not self.epsilon > 0:
            raise ConfigurationError(f"epsilon must be positive, got {self.epsilon}")


@dataclass(frozen=True)
class StoppingCriteria:
    accuracy_threshold: float = 0.9
    max_iterations: int = 2000

    def __post_init__(self) -> None:
        if not (0.0 <= self.accuracy_threshold <= 1.0):
            raise ConfigurationError(f"accuracy_threshold must lie in [0, 1], got {self.accuracy_threshold}")
        if not (isinstance(self.max_iterations, (int, np.integer)) and self.max_iterations >= 1):
            raise ConfigurationError(f"max_iterations must be a positive integer, got {self.max_iterations!r}")


@dataclass
class ReconstructionResult:
    pair: ProtoTokenPair
    loss_history: list
    accuracy_history: list
    iterations_used: int
    converged: bool
    decoded: np.ndarray


def assemble_input(pair: ProtoTokenPair, length: int) -> np.ndarray:
    """Stack [e, m, m, ...] into a (length, d) input block."""
    if not (isinstance(length, (int, np.integer)) and length >= 1):
        raise ValidationError(f"length must be a positive integer, got {length!r}")
    out = np.empty((length, pair.dim), dtype=np.float64)
    out[0] = pair.e
    out[1:] = pair.m
    return out


def _logits_of(trace_or_logits) -> np.ndarray:
    logits = getattr(trace_or_logits, "logits", trace_or_logits)
    return np.asarray(logits, dtype=np.float64)


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def cross_entropy(trace, targets: TargetSequence) -> float:
    """Mean negative log-likelihood of each target token under its logit row."""
    logits = _logits_of(trace)
    tokens = targets.tokens
    if logits.shape[0] != tokens.shape[0]:
        raise ShapeError(f"trace length {logits.shape[0]} != target length {tokens.shape[0]}")
    logp = _log_softmax(logits)
    return float(-np.mean(logp[np.arange(len(tokens)), tokens]))


def cross_entropy_with_gradient(logits: np.ndarray, targets: TargetSequence):
    """Cross-entropy value and its gradient with respect to the logits."""
    logits = _logits_of(logits)
    tokens = targets.tokens
    if logits.shape[0] != tokens.shape[0]:
        raise ShapeError(f"logit rows {logits.shape[0]} != target length {tokens.shape[0]}")
    t = tokens.shape[0]
    logp = _log_softmax(logits)
    value = float(-np.mean(logp[np.arange(t), tokens]))
    grad = np.exp(logp)  # softmax probabilities
    grad[np.arange(t), tokens] -= 1.0
    grad /= t
    return value, grad


def token_accuracy(trace, targets: TargetSequence) -> float:
    """Fraction of positions whose argmax logit hits the target (ties: lowest id)."""
    logits = _logits_of(trace)
    tokens = targets.tokens
    if logits.shape[0] != tokens.shape[0]:
        raise ShapeError(f"trace length {logits.shape[0]} != target length {tokens.shape[0]}")
    predicted = np.argmax(logits, axis=1)  # np.argmax returns the first (lowest) index on ties
    return float(np.mean(predicted == tokens))


def init_pair(d: int, seed: int, teacher: Optional[np.ndarray] = None) -> ProtoTokenPair:
    """Draw a fresh pair: standard normal, or lead vector copied from a teacher.

    With a teacher, e is the teacher vector verbatim and m is the generator's
    first d draws; without, e takes the first d draws and m the next d.
    """
    if not (isinstance(d, (int, np.integer)) and d >= 1):
        raise ValidationError(f"dimension must be a positive integer, got {d!r}")
    rng = np.random.default_rng(seed)
    if teacher is not None:
        teacher = np.asarray(teacher, dtype=np.float64)
        if teacher.shape != (d,):
            raise ShapeError(f"teacher vector has shape {teacher.shape}, expected ({d},)")
        return ProtoTokenPair(e=teacher.copy(), m=rng.standard_normal(d))
    return ProtoTokenPair(e=rng.standard_normal(d), m=rng.standard_normal(d))


# ---------------------------------------------------------------------------
# AdamW with decoupled weight decay
# ---------------------------------------------------------------------------

def init_adamw_state(params: dict) -> dict:
    return {
        "m": {k: np.zeros_like(v) for k, v in params.items()},
        "v": {k: np.zeros_like(v) for k, v in params.items()},
    }


def adamw_step(params: dict, grads: dict, state: dict, config: OptimizerConfig, step_index: int):
    """One decoupled-weight-decay Adam update; returns (new_params, new_state)."""
    if step_index < 1:
        raise ValidationError(f"step_index must be >= 1, got {step_index}")
    new_params, new_m, new_v = {}, {}, {}
    for key, theta in params.items():
        g = grads[key]
        if g.shape != theta.shape:
            raise ShapeError(f"gradient for '{key}' has shape {g.shape}, expected {theta.shape}")
        if not np.isfinite(g).all():
            raise NumericError(f"non-finite gradient for '{key}'")
        m = config.beta1 * state["m"][key] + (1.0 - config.beta1) * g
        v = config.beta2 * state["v"][key] + (1.0 - config.beta2) * g * g
        m_hat = m / (1.0 - config.beta1 ** step_index)
        v_hat = v / (1.0 - config.beta2 ** step_index)
        new_params[key] = (theta
                           - config.learning_rate * m_hat / (np.sqrt(v_hat) + config.epsilon)
                           - config.learning_rate * config.weight_decay * theta)
        new_m[key], new_v[key] = m, v
    return new_params, {"m": new_m, "v": new_v}


# ---------------------------------------------------------------------------
# The reconstruction loop
# ---------------------------------------------------------------------------

def split_input_gradient(grad: np.ndarray):
    """Route a (T, d) input gradient to the pair: row 0 to e, rows 1..T-1 summed to m."""
    grad_e = grad[0].copy()
    grad_m = grad[1:].sum(axis=0) if grad.shape[0] > 1 else np.zeros_like(grad_e)
    return grad_e, grad_m


def optimize_reconstruction(weights: ModelWeights, targets: TargetSequence,
                            opt: Optional[OptimizerConfig] = None,
                            stop: Optional[StoppingCriteria] = None,
                            seed: int = 0,
                            teacher: Optional[np.ndarray] = None,
                            initial_pair: Optional[ProtoTokenPair] = None) -> ReconstructionResult:
    """Fit a proto-token pair to one target sequence.

    Each iteration measures loss and accuracy at the current pair, records
    them, stops on the accuracy threshold, and otherwise applies one update.
    No update follows the final recorded measurement, so the returned pair is
    the one whose metrics close the histories.
    """
    opt = opt or OptimizerConfig()
    stop = stop or StoppingCriteria()
    targets.validate_for(weights.config)
    t = len(targets)

    if initial_pair is not None:
        pair = initial_pair.copy()
        if pair.dim != weights.config.hidden_size:
            raise ShapeError(f"pair dimension {pair.dim} != model hidden size {weights.config.hidden_size}")
    else:
        pair = init_pair(weights.config.hidden_size, seed, teacher=teacher)

    params = {"e": pair.e.copy(), "m": pair.m.copy()}
    state = init_adamw_state(params)
    loss_history, accuracy_history = [], []
    converged = False

    for step_index in range(1, stop.max_iterations + 1):
        try:
            trace = forward(weights, assemble_input(ProtoTokenPair(params["e"], params["m"]), t))
            value, dlogits = cross_entropy_with_gradient(trace.logits, targets)
        except NumericError as exc:
            raise NumericError(f"optimization aborted at step {step_index}: {exc}") from exc
        accuracy = token_accuracy(trace, targets)
        loss_history.append(value)
        accuracy_history.append(accuracy)
        if accuracy >= stop.accuracy_threshold:
            converged = True
            break
        if step_index == stop.max_iterations:
            break
        try:
            grad = backward_to_inputs(weights, trace, dlogits)
        except NumericError as exc:
            raise NumericError(f"optimization aborted at step {step_index}: {exc}") from exc
        grad_e, grad_m = split_input_gradient(grad)
        params, state = adamw_step(params, {"e": grad_e, "m": grad_m}, state, opt, step_index)

    final = ProtoTokenPair(e=params["e"], m=params["m"])
    return ReconstructionResult(
        pair=final,
        loss_history=loss_history,
        accuracy_history=accuracy_history,
        iterations_used=len(loss_history),
        converged=converged,
        decoded=decode(weights, final, t),
    )


def decode(weights: ModelWeights, pair: ProtoTokenPair, length: int) -> np.ndarray:
    """Single forward pass, argmax per position; no autoregressive feedback."""
    trace = forward(weights, assemble_input(pair, length))
    return np.argmax(trace.logits, axis=1)


# ---------------------------------------------------------------------------
# JSON-lines serialization
# ---------------------------------------------------------------------------

def save_result_jsonl(result: ReconstructionResult, path) -> None:
    """One line per recorded step, then a footer line holding the final pair."""
    with open(path, "w", encoding="utf-8") as f:
        for i, (loss, acc) in enumerate(zip(result.loss_history, result.accuracy_history), start=1):
            f.write(json.dumps({"step": i, "ce_loss": loss, "token_accuracy": acc}) + "\n")
        f.write(json.dumps({
            "final": True,
            "iterations_used": result.iterations_used,
            "converged": result.converged,
            "decoded": [int(x) for x in result.decoded],
            "e": [float(x) for x in result.pair.e],
            "m": [float(x) for x in result.pair.m],
        }) + "\n")


def load_result_jsonl(path) -> ReconstructionResult:
    steps, footer = [], None
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            record = json.loads(line)
            if record.get("final"):
                footer = record
            else:
                steps.append(record)
    if footer is None:
        raise ValidationError(f"no footer record in {path}")
    return ReconstructionResult(
        pair=ProtoTokenPair(e=np.array(footer["e"]), m=np.array(footer["m"])),
        loss_history=[s["ce_loss"] for s in steps],
        accuracy_history=[s["token_accuracy"] for s in steps],
        iterations_used=footer["iterations_used"],
        converged=footer["converged"],
        decoded=np.array(footer["decoded"], dtype=np.int64),
    )
