"""Norm-controlled perturbations of the lead proto-token.

Four noise families share one normalization rule: the raw sample is rescaled
to a fixed fraction alpha of the perturbed vector's norm, so distribution
parameters only shape the direction of the kick, never its size.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConfigurationError, DegenerateVectorError
from .model import ModelWeights, forward
from .prototoken import ProtoTokenPair, TargetSequence, assemble_input, token_accuracy

NOISE_KINDS = ("gaussian", "uniform", "exponential", "sinusoidal")
DEFAULT_ALPHAS = (0.0, 0.05, 0.1, 0.2, 0.5, 1.0)


@dataclass(frozen=True)
class NoiseSpec:
    kind: str
    alpha: float
    seed: int = 0
    sigma: float = 1.0
    low: float = -1.0
    high: float = 1.0
    rate: float = 1.0
    omega: float = 0.1
    phi: float = 0.0
    centered: bool = False  # exponential only: subtract the mean 1/rate

    def __post_init__(self) -> None:
        if self.kind not in NOISE_KINDS:
            raise ConfigurationError(f"unknown noise kind {self.kind!r}; expected one of {NOISE_KINDS}")
        if not (math.isfinite(self.alpha) and self.alpha >= 0):
            raise ConfigurationError(f"alpha must be finite and non-negative, got {self.alpha}")
        if self.kind == "gaussian" and not self.sigma > 0:
            raise ConfigurationError(f"sigma must be positive, got {self.sigma}")
        if self.kind == "uniform" and not self.low < self.high:
            raise ConfigurationError(f"uniform bounds need low < high, got ({self.low}, {self.high})")
        if self.kind == "exponential" and not self.rate > 0:
            raise ConfigurationError(f"rate must be positive, got {self.rate}")
        if self.kind == "sinusoidal" and not (math.isfinite(self.omega) and math.isfinite(self.phi)):
            raise ConfigurationError("omega and phi must be finite")


def sample_noise(spec: NoiseSpec, d: int) -> np.ndarray:
    """Draw a raw d-dimensional noise vector (unscaled)."""
    if d < 1:
        raise ConfigurationError(f"dimension must be positive, got {d}")
    rng = np.random.default_rng(spec.seed)
    if spec.kind == "gaussian":
        return rng.normal(0.0, spec.sigma, size=d)
    if spec.kind == "uniform":
        return rng.uniform(spec.low, spec.high, size=d)
    if spec.kind == "exponential":
        sample = rng.exponential(1.0 / spec.rate, size=d)
        return sample - 1.0 / spec.rate if spec.centered else sample
    # sinusoidal: deterministic over the embedding coordinate index
    return np.sin(spec.omega * np.arange(d) + spec.phi)


def normalize_noise(eps: np.ndarray, e: np.ndarray, alpha: float) -> np.ndarray:
    """Rescale eps to have norm alpha * |e|, keeping its direction."""
    eps = np.asarray(eps, dtype=np.float64)
    e = np.asarray(e, dtype=np.float64)
    if alpha == 0.0:
        return np.zeros_like(eps)
    norm_eps = np.linalg.norm(eps)
    if norm_eps == 0.0:
        raise DegenerateVectorError("cannot normalize a zero noise vector at positive alpha")
    return eps * (alpha * np.linalg.norm(e) / norm_eps)


def perturb_e(pair: ProtoTokenPair, spec: NoiseSpec) -> ProtoTokenPair:
    """Add a normalized noise sample to e; m passes through untouched."""
    eps = normalize_noise(sample_noise(spec, pair.dim), pair.e, spec.alpha)
    return ProtoTokenPair(e=pair.e + eps, m=pair.m.copy())


@dataclass(frozen=True)
class SweepCell:
    kind: str
    alpha: float
    mean_accuracy: float
    std_accuracy: float
    trials: int


@dataclass
class SweepResult:
    cells: list
    kinds: tuple
    alphas: tuple
    trials: int
    baseline_accuracy: float

    def cell(self, kind: str, alpha: float) -> SweepCell:
        for c in self.cells:
            if c.kind == kind and c.alpha == alpha:
                return c
        raise KeyError(f"no sweep cell for ({kind!r}, {alpha!r})")


def noise_sweep(weights: ModelWeights, pair: ProtoTokenPair, targets: TargetSequence,
                alphas=None, kinds=None, trials: int = 10, seed: int = 0,
                spec_overrides: Optional[dict] = None) -> SweepResult:
    """Measure decode accuracy over the (kind, alpha) grid, `trials` draws per cell.

    Per-trial seeds derive from one seed sequence in grid order, so the sweep
    is reproducible and cells stay independent. `spec_overrides` forwards
    distribution parameters (sigma, low/high, rate, omega, phi, centered).
    """
    alphas = tuple(DEFAULT_ALPHAS if alphas is None else alphas)
    kinds = tuple(NOISE_KINDS if kinds is None else kinds)
    if not alphas or not kinds:
        raise ConfigurationError("alphas and kinds must be non-empty")
    if trials < 1:
        raise ConfigurationError(f"trials must be >= 1, got {trials}")
    for kind in kinds:
        if kind not in NOISE_KINDS:
            raise ConfigurationError(f"unknown noise kind {kind!r}")
    overrides = spec_overrides or {}

    baseline = token_accuracy(forward(weights, assemble_input(pair, len(targets))), targets)
    trial_seeds = np.random.SeedSequence(seed).generate_state(
        len(kinds) * len(alphas) * trials, dtype=np.uint64)

    cells = []
    flat = 0
    for kind in kinds:
        for alpha in alphas:
            accuracies = []
            for _ in range(trials):
                spec = NoiseSpec(kind=kind, alpha=float(alpha), seed=int(trial_seeds[flat]), **overrides)
                flat += 1
                perturbed = perturb_e(pair, spec)
                trace = forward(weights, assemble_input(perturbed, len(targets)))
                accuracies.append(token_accuracy(trace, targets))
            cells.append(SweepCell(kind=kind, alpha=float(alpha),
                                   mean_accuracy=float(np.mean(accuracies)),
                                   std_accuracy=float(np.std(accuracies)),
                                   trials=trials))
    return SweepResult(cells=cells, kinds=kinds, alphas=alphas, trials=trials,
                       baseline_accuracy=float(baseline))


def save_sweep_csv(result: SweepResult, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["kind", "alpha", "mean_accuracy", "std_accuracy", "trials"])
        for c in result.cells:
            writer.writerow([c.kind, c.alpha, c.mean_accuracy, c.std_accuracy, c.trials])
