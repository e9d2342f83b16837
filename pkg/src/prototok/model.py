"""Frozen decoder-only causal transformer over raw input embeddings.

Pre-norm decoder blocks with RMS normalization, learned absolute positional
encodings added to the input rows, GELU MLP, and a tied set of per-layer
attention projections. The backward pass is written by hand and returns
exact reverse-mode gradients of a scalar loss with respect to the *input*
rows only; weights never accumulate gradients and are immutable after
construction. Everything runs in float64.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from io import BytesIO
from typing import Callable, Optional

import numpy as np
from scipy.special import erf

from .errors import (
    ConfigurationError,
    NumericError,
    SequenceLengthError,
    ShapeError,
    WeightsIOError,
)

WEIGHTS_MAGIC = "prototok-weights"
WEIGHTS_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    """Dimensions and constants of the frozen transformer."""

    hidden_size: int
    num_layers: int
    num_heads: int
    mlp_hidden: int
    vocab_size: int
    max_positions: int
    norm_epsilon: float = 1e-5
    seed: int = 0
    use_positions: bool = True  # whether positional encodings are added to input rows

    def __post_init__(self) -> None:
        for name in ("hidden_size", "num_layers", "num_heads", "mlp_hidden",
                     "vocab_size", "max_positions"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or value < 1:
                raise ConfigurationError(f"{name} must be a positive integer, got {value!r}")
        if self.hidden_size % self.num_heads != 0:
            raise ConfigurationError(
                f"hidden_size {self.hidden_size} is not divisible by num_heads {self.num_heads}"
            )
        if not (self.norm_epsilon > 0 and math.isfinite(self.norm_epsilon)):
            raise ConfigurationError(f"norm_epsilon must be a small positive real, got {self.norm_epsilon!r}")
        if not isinstance(self.seed, (int, np.integer)) or self.seed < 0:
            raise ConfigurationError(f"seed must be an unsigned integer, got {self.seed!r}")

    @property
    def head_dim(self) -> int:
        return self.hidden_size // self.num_heads


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ModelWeights:
    """Immutable parameter set of the frozen transformer.

    Per-layer tuples are indexed by layer. Attention projections carry no
    bias; the MLP does. Normalization scales are RMS-norm gains.
    """

    config: ModelConfig
    pos: np.ndarray                      # (max_positions, d)
    attn_norm: tuple                     # L x (d,)
    wq: tuple                            # L x (d, d)
    wk: tuple
    wv: tuple
    wo: tuple
    mlp_norm: tuple                      # L x (d,)
    w1: tuple                            # L x (d, mlp_hidden)
    b1: tuple                            # L x (mlp_hidden,)
    w2: tuple                            # L x (mlp_hidden, d)
    b2: tuple                            # L x (d,)
    final_norm: np.ndarray               # (d,)
    unembed: np.ndarray                  # (d, vocab_size)

    def __post_init__(self) -> None:
        c = self.config
        expected = tensor_manifest(c)
        flat = dict(self.named_tensors())
        for name, shape in expected:
            arr = flat[name]
            if arr.shape != shape:
                raise ShapeError(f"tensor '{name}' has shape {arr.shape}, expected {shape}")
            if not np.isfinite(arr).all():
                raise ValueError(f"tensor '{name}' contains non-finite entries")
        # Freeze every array so the frozen-weights contract is enforced, not advisory.
        object.__setattr__(self, "pos", _freeze(self.pos))
        for field in ("attn_norm", "wq", "wk", "wv", "wo", "mlp_norm", "w1", "b1", "w2", "b2"):
            object.__setattr__(self, field, tuple(_freeze(a) for a in getattr(self, field)))
        object.__setattr__(self, "final_norm", _freeze(self.final_norm))
        object.__setattr__(self, "unembed", _freeze(self.unembed))

    def named_tensors(self):
        """Yield (name, array) pairs in the canonical manifest order."""
        yield "pos", np.asarray(self.pos)
        for l in range(self.config.num_layers):
            yield f"layers.{l}.attn_norm", np.asarray(self.attn_norm[l])
            yield f"layers.{l}.wq", np.asarray(self.wq[l])
            yield f"layers.{l}.wk", np.asarray(self.wk[l])
            yield f"layers.{l}.wv", np.asarray(self.wv[l])
            yield f"layers.{l}.wo", np.asarray(self.wo[l])
            yield f"layers.{l}.mlp_norm", np.asarray(self.mlp_norm[l])
            yield f"layers.{l}.w1", np.asarray(self.w1[l])
            yield f"layers.{l}.b1", np.asarray(self.b1[l])
            yield f"layers.{l}.w2", np.asarray(self.w2[l])
            yield f"layers.{l}.b2", np.asarray(self.b2[l])
        yield "final_norm", np.asarray(self.final_norm)
        yield "unembed", np.asarray(self.unembed)


def tensor_manifest(config: ModelConfig) -> list:
    """Canonical (name, shape) list for a config; fixes the weights-file layout."""
    d, m = config.hidden_size, config.mlp_hidden
    entries = [("pos", (config.max_positions, d))]
    for l in range(config.num_layers):
        entries += [
            (f"layers.{l}.attn_norm", (d,)),
            (f"layers.{l}.wq", (d, d)),
            (f"layers.{l}.wk", (d, d)),
            (f"layers.{l}.wv", (d, d)),
            (f"layers.{l}.wo", (d, d)),
            (f"layers.{l}.mlp_norm", (d,)),
            (f"layers.{l}.w1", (d, m)),
            (f"layers.{l}.b1", (m,)),
            (f"layers.{l}.w2", (m, d)),
            (f"layers.{l}.b2", (d,)),
        ]
    entries += [("final_norm", (d,)), ("unembed", (d, config.vocab_size))]
    return entries


def init_random_weights(config: ModelConfig, attn_gain: float = 1.0,
                        mlp_gain: float = 1.0, final_gain: float = 1.0) -> ModelWeights:
    """Draw a deterministic random parameter set.

    Projections are N(0, 1/fan_in) (scale 1/sqrt(d) for the square attention
    projections), normalization gains start constant, biases at 0. Positional
    encodings are standard normal: the same scale as standard-normal input
    rows, so each position carries a distinguishable signature, which the
    repeated-m reconstruction setup depends on.

    With all gains at 1 a random net acts close to a positionwise averaging
    map: attention is near uniform and the residual stream dominates, so
    different positions see almost-parallel gradients and input-only
    optimization cannot set more than a handful of output tokens
    independently. Raising attn_gain sharpens attention (logits scale with
    its square) and strengthens the attended values; final_gain raises the
    logit temperature so per-position margins give usable gradients. The
    non-unit gains stand in for the position-sensitive behavior a trained
    network would have; around (attn_gain=3, final_gain=8) a d=64 two-layer
    net recovers 16-token sequences reliably where unit gains stall below
    one-third accuracy.
    """
    for name, gain in (("attn_gain", attn_gain), ("mlp_gain", mlp_gain),
                       ("final_gain", final_gain)):
        if not gain > 0:
            raise ConfigurationError(f"{name} must be positive, got {gain}")
    rng = np.random.default_rng(config.seed)
    d, m = config.hidden_size, config.mlp_hidden

    def proj(fan_in: int, shape) -> np.ndarray:
        return rng.normal(0.0, 1.0 / math.sqrt(fan_in), size=shape)

    pos = rng.normal(0.0, 1.0, size=(config.max_positions, d))
    attn_norm, wq, wk, wv, wo = [], [], [], [], []
    mlp_norm, w1, b1, w2, b2 = [], [], [], [], []
    for _ in range(config.num_layers):
        attn_norm.append(np.full(d, float(attn_gain)))
        wq.append(proj(d, (d, d)))
        wk.append(proj(d, (d, d)))
        wv.append(proj(d, (d, d)))
        wo.append(proj(d, (d, d)))
        mlp_norm.append(np.full(d, float(mlp_gain)))
        w1.append(proj(d, (d, m)))
        b1.append(np.zeros(m))
        w2.append(proj(m, (m, d)))
        b2.append(np.zeros(d))
    final_norm = np.full(d, float(final_gain))
    unembed = proj(d, (d, config.vocab_size))
    return ModelWeights(
        config=config, pos=pos,
        attn_norm=tuple(attn_norm), wq=tuple(wq), wk=tuple(wk), wv=tuple(wv), wo=tuple(wo),
        mlp_norm=tuple(mlp_norm), w1=tuple(w1), b1=tuple(b1), w2=tuple(w2), b2=tuple(b2),
        final_norm=final_norm, unembed=unembed,
    )


# ---------------------------------------------------------------------------
# Forward / backward
# ---------------------------------------------------------------------------

@dataclass
class _LayerCache:
    x_attn: np.ndarray   # residual entering the attention sub-block (T, d)
    n1: np.ndarray       # (T, d)
    r1: np.ndarray       # (T,) rms denominators
    q: np.ndarray        # (H, T, hd)
    k: np.ndarray
    v: np.ndarray
    probs: np.ndarray    # (H, T, T) attention rows
    x_mlp: np.ndarray    # residual entering the MLP sub-block (T, d)
    n2: np.ndarray
    r2: np.ndarray
    u1: np.ndarray       # (T, mlp_hidden) pre-activation
    a1: np.ndarray       # (T, mlp_hidden)


@dataclass
class ForwardTrace:
    """Logits plus everything the backward pass needs.

    `attention` is populated only when requested; it stacks the per-layer,
    per-head attention rows as (num_layers, num_heads, T, T).
    """

    logits: np.ndarray
    attention: Optional[np.ndarray]
    inputs: np.ndarray
    layer_caches: list
    h_final: np.ndarray
    nf: np.ndarray
    rf: np.ndarray

    @property
    def length(self) -> int:
        return self.logits.shape[0]


def _rmsnorm(x: np.ndarray, gain: np.ndarray, eps: float):
    r = np.sqrt(np.mean(x * x, axis=1) + eps)
    return x * (gain[None, :] / r[:, None]), r


def _rmsnorm_backward(dy: np.ndarray, x: np.ndarray, gain: np.ndarray, r: np.ndarray) -> np.ndarray:
    d = x.shape[1]
    inner = np.sum(dy * gain[None, :] * x, axis=1)
    return dy * (gain[None, :] / r[:, None]) - x * (inner / (d * r ** 3))[:, None]


_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + erf(x / _SQRT2))


def _gelu_grad(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + erf(x / _SQRT2)) + x * np.exp(-0.5 * x * x) * _INV_SQRT_2PI


def _split_heads(x: np.ndarray, num_heads: int) -> np.ndarray:
    t, d = x.shape
    return x.reshape(t, num_heads, d // num_heads).transpose(1, 0, 2)


def _merge_heads(x: np.ndarray) -> np.ndarray:
    h, t, hd = x.shape
    return x.transpose(1, 0, 2).reshape(t, h * hd)


def _check_finite(arr: np.ndarray, where: str) -> None:
    if not np.isfinite(arr).all():
        raise NumericError(f"non-finite values in {where}")


def forward(weights: ModelWeights, inputs: np.ndarray, capture_attention: bool = False) -> ForwardTrace:
    """Run the frozen model over a (T, d) embedding sequence.

    Deterministic: identical (weights, inputs, flags) give bit-identical
    logits. Attention obeys the causal mask exactly (future keys get weight
    0) and every attention row sums to 1.
    """
    c = weights.config
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != c.hidden_size:
        raise ShapeError(f"inputs must be (T, {c.hidden_size}), got {x.shape}")
    t = x.shape[0]
    if t < 1:
        raise ShapeError("inputs must contain at least one row")
    if t > c.max_positions:
        raise SequenceLengthError(f"sequence length {t} exceeds max_positions {c.max_positions}")
    _check_finite(x, "inputs")

    h = x + weights.pos[:t] if c.use_positions else x.copy()
    inv_sqrt_hd = 1.0 / math.sqrt(c.head_dim)
    future = np.triu(np.ones((t, t), dtype=bool), k=1)

    caches = []
    attn_stack = [] if capture_attention else None
    for l in range(c.num_layers):
        x_attn = h
        n1, r1 = _rmsnorm(x_attn, weights.attn_norm[l], c.norm_epsilon)
        q = _split_heads(n1 @ weights.wq[l], c.num_heads)
        k = _split_heads(n1 @ weights.wk[l], c.num_heads)
        v = _split_heads(n1 @ weights.wv[l], c.num_heads)
        scores = np.matmul(q, k.transpose(0, 2, 1)) * inv_sqrt_hd
        scores[:, future] = -np.inf
        scores -= scores.max(axis=2, keepdims=True)
        expsc = np.exp(scores)
        probs = expsc / expsc.sum(axis=2, keepdims=True)
        ctx = _merge_heads(np.matmul(probs, v))
        h = x_attn + ctx @ weights.wo[l]

        x_mlp = h
        n2, r2 = _rmsnorm(x_mlp, weights.mlp_norm[l], c.norm_epsilon)
        u1 = n2 @ weights.w1[l] + weights.b1[l]
        a1 = _gelu(u1)
        h = x_mlp + a1 @ weights.w2[l] + weights.b2[l]
        _check_finite(h, f"layer {l} output")

        caches.append(_LayerCache(x_attn=x_attn, n1=n1, r1=r1, q=q, k=k, v=v,
                                  probs=probs, x_mlp=x_mlp, n2=n2, r2=r2, u1=u1, a1=a1))
        if capture_attention:
            attn_stack.append(probs)

    nf, rf = _rmsnorm(h, weights.final_norm, c.norm_epsilon)
    logits = nf @ weights.unembed
    _check_finite(logits, "logits")

    attention = np.stack(attn_stack) if capture_attention else None
    return ForwardTrace(logits=logits, attention=attention, inputs=x,
                        layer_caches=caches, h_final=h, nf=nf, rf=rf)


def backward_to_inputs(weights: ModelWeights, trace: ForwardTrace, dlogits: np.ndarray) -> np.ndarray:
    """Reverse-mode pass: gradient of a scalar with logit-gradient `dlogits`.

    Returns the (T, d) gradient with respect to the input rows. Weights
    receive nothing.
    """
    c = weights.config
    dlogits = np.asarray(dlogits, dtype=np.float64)
    if dlogits.shape != trace.logits.shape:
        raise ShapeError(f"dlogits shape {dlogits.shape} != logits shape {trace.logits.shape}")
    inv_sqrt_hd = 1.0 / math.sqrt(c.head_dim)

    dnf = dlogits @ weights.unembed.T
    dh = _rmsnorm_backward(dnf, trace.h_final, weights.final_norm, trace.rf)

    for l in reversed(range(c.num_layers)):
        lc = trace.layer_caches[l]
        # MLP sub-block: h_out = x_mlp + gelu(n2 @ w1 + b1) @ w2 + b2
        da1 = dh @ weights.w2[l].T
        du1 = da1 * _gelu_grad(lc.u1)
        dn2 = du1 @ weights.w1[l].T
        dx_mlp = dh + _rmsnorm_backward(dn2, lc.x_mlp, weights.mlp_norm[l], lc.r2)

        # Attention sub-block: x_mlp = x_attn + merge(probs @ v) @ wo
        dctx = _split_heads(dx_mlp @ weights.wo[l].T, c.num_heads)
        dprobs = np.matmul(dctx, lc.v.transpose(0, 2, 1))
        dv = np.matmul(lc.probs.transpose(0, 2, 1), dctx)
        dscores = lc.probs * (dprobs - np.sum(dprobs * lc.probs, axis=2, keepdims=True))
        dq = np.matmul(dscores, lc.k) * inv_sqrt_hd
        dk = np.matmul(dscores.transpose(0, 2, 1), lc.q) * inv_sqrt_hd
        dn1 = (_merge_heads(dq) @ weights.wq[l].T
               + _merge_heads(dk) @ weights.wk[l].T
               + _merge_heads(dv) @ weights.wv[l].T)
        dh = dx_mlp + _rmsnorm_backward(dn1, lc.x_attn, weights.attn_norm[l], lc.r1)
        if not np.isfinite(dh).all():
            raise NumericError(f"non-finite values in backward pass at layer {l}")

    return dh  # positional encodings are additive constants


@dataclass
class LossSpec:
    """A differentiable scalar loss over one forward pass.

    `logit_term(logits) -> (value, dvalue/dlogits)` covers everything routed
    through the model (e.g. cross-entropy); the optional
    `input_term(inputs) -> (value, dvalue/dinputs)` covers regularizers that
    act on the raw input rows directly.
    """

    logit_term: Callable
    input_term: Optional[Callable] = None


def loss_and_input_gradients(weights: ModelWeights, inputs: np.ndarray, loss: LossSpec,
                             capture_attention: bool = False):
    """Evaluate a LossSpec and its exact input gradient in one fwd+bwd pass.

    Returns (value, gradient, trace).
    """
    trace = forward(weights, inputs, capture_attention=capture_attention)
    value, dlogits = loss.logit_term(trace.logits)
    grad = backward_to_inputs(weights, trace, dlogits)
    if loss.input_term is not None:
        extra, dextra = loss.input_term(trace.inputs)
        value = value + extra
        grad = grad + dextra
    return value, grad, trace


def input_gradients(weights: ModelWeights, inputs: np.ndarray, loss: LossSpec) -> np.ndarray:
    """Gradient of `loss` with respect to the input rows, shape (T, d)."""
    return loss_and_input_gradients(weights, inputs, loss)[1]


# ---------------------------------------------------------------------------
# Weights file I/O
# ---------------------------------------------------------------------------

_HEADER_FIELDS = ("hidden_size", "num_layers", "num_heads", "mlp_hidden",
                  "vocab_size", "max_positions", "norm_epsilon", "seed", "use_positions")


def save_weights(weights: ModelWeights, path) -> None:
    """Write the documented weights format: text header, then raw little-endian float64."""
    c = weights.config
    lines = [f"{WEIGHTS_MAGIC} {WEIGHTS_VERSION}"]
    for field in _HEADER_FIELDS:
        value = getattr(c, field)
        if field == "use_positions":
            value = int(value)
        lines.append(f"{field} {value!r}" if isinstance(value, float) else f"{field} {value}")
    manifest = list(weights.named_tensors())
    lines.append(f"tensors {len(manifest)}")
    for name, arr in manifest:
        lines.append(name + " " + " ".join(str(s) for s in arr.shape))
    lines.append("data")
    with open(path, "wb") as f:
        f.write(("\n".join(lines) + "\n").encode("ascii"))
        for _, arr in manifest:
            f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def _parse_header_line(raw: bytes, what: str) -> str:
    if not raw:
        raise WeightsIOError(f"truncated header: missing {what}")
    return raw.decode("ascii", errors="replace").rstrip("\n")


def load_weights(path):
    """Read a weights file; returns (ModelConfig, ModelWeights).

    Round-trips save_weights bit-exactly. Raises WeightsIOError naming the
    offending tensor on truncation, shape mismatch, or non-finite entries.
    """
    with open(path, "rb") as f:
        buf = BytesIO(f.read())

    magic = _parse_header_line(buf.readline(), "magic line").split()
    if len(magic) != 2 or magic[0] != WEIGHTS_MAGIC:
        raise WeightsIOError("not a prototok weights file (bad magic line)")
    if magic[1] != str(WEIGHTS_VERSION):
        raise WeightsIOError(f"unsupported weights format version {magic[1]!r}")

    fields = {}
    for field in _HEADER_FIELDS:
        parts = _parse_header_line(buf.readline(), f"header field '{field}'").split()
        if len(parts) != 2 or parts[0] != field:
            raise WeightsIOError(f"malformed header: expected field '{field}', got {parts!r}")
        fields[field] = parts[1]
    try:
        config = ModelConfig(
            hidden_size=int(fields["hidden_size"]),
            num_layers=int(fields["num_layers"]),
            num_heads=int(fields["num_heads"]),
            mlp_hidden=int(fields["mlp_hidden"]),
            vocab_size=int(fields["vocab_size"]),
            max_positions=int(fields["max_positions"]),
            norm_epsilon=float(fields["norm_epsilon"]),
            seed=int(fields["seed"]),
            use_positions=bool(int(fields["use_positions"])),
        )
    except (ValueError, ConfigurationError) as exc:
        raise WeightsIOError(f"invalid header configuration: {exc}") from exc

    count_parts = _parse_header_line(buf.readline(), "tensor count").split()
    if len(count_parts) != 2 or count_parts[0] != "tensors":
        raise WeightsIOError("malformed header: missing tensor count")
    declared = []
    for _ in range(int(count_parts[1])):
        parts = _parse_header_line(buf.readline(), "tensor manifest entry").split()
        declared.append((parts[0], tuple(int(s) for s in parts[1:])))
    if _parse_header_line(buf.readline(), "data marker") != "data":
        raise WeightsIOError("malformed header: missing 'data' marker")

    expected = tensor_manifest(config)
    if len(declared) != len(expected):
        raise WeightsIOError(f"manifest lists {len(declared)} tensors, config requires {len(expected)}")
    arrays = {}
    for (name, shape), (want_name, want_shape) in zip(declared, expected):
        if name != want_name:
            raise WeightsIOError(f"unexpected tensor '{name}' (expected '{want_name}')")
        if shape != want_shape:
            raise WeightsIOError(
                f"shape mismatch for tensor '{name}': header declares {shape}, config requires {want_shape}"
            )
        nbytes = int(np.prod(shape)) * 8
        raw = buf.read(nbytes)
        if len(raw) != nbytes:
            raise WeightsIOError(f"unexpected end of tensor data in '{name}'")
        arr = np.frombuffer(raw, dtype="<f8").reshape(shape)
        if not np.isfinite(arr).all():
            raise WeightsIOError(f"non-finite entries in tensor '{name}'")
        arrays[name] = arr.copy()
    if buf.read(1):
        raise WeightsIOError("trailing bytes after final tensor")

    L = config.num_layers
    weights = ModelWeights(
        config=config,
        pos=arrays["pos"],
        attn_norm=tuple(arrays[f"layers.{l}.attn_norm"] for l in range(L)),
        wq=tuple(arrays[f"layers.{l}.wq"] for l in range(L)),
        wk=tuple(arrays[f"layers.{l}.wk"] for l in range(L)),
        wv=tuple(arrays[f"layers.{l}.wv"] for l in range(L)),
        wo=tuple(arrays[f"layers.{l}.wo"] for l in range(L)),
        mlp_norm=tuple(arrays[f"layers.{l}.mlp_norm"] for l in range(L)),
        w1=tuple(arrays[f"layers.{l}.w1"] for l in range(L)),
        b1=tuple(arrays[f"layers.{l}.b1"] for l in range(L)),
        w2=tuple(arrays[f"layers.{l}.w2"] for l in range(L)),
        b2=tuple(arrays[f"layers.{l}.b2"] for l in range(L)),
        final_norm=arrays["final_norm"],
        unembed=arrays["unembed"],
    )
    return config, weights
