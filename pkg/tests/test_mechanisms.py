import math
import random
import statistics

import pytest

from lomas.errors import InvalidPrivacyParams
from lomas.mechanisms import (
    gaussian_sigma,
    gaussian_sigma_relaxed,
    laplace_scale,
    private_rng,
    sample_gaussian,
    sample_laplace,
    seeded_rng,
)

# frozen from an independent evaluation of sqrt(2*ln(1.25/delta))
SIGMA_1_1_1E5 = 4.844805262605389
SIGMA_1_05_1E5 = 9.689610525210778


def test_laplace_scale_examples():
    assert laplace_scale(1, 1) == 1.0
    assert laplace_scale(65.0, 0.1) == pytest.approx(650.0)
    assert laplace_scale(0, 5) == 0.0


def test_laplace_scale_rejects_bad_epsilon():
    for eps in (0, -1, float("nan"), float("inf")):
        with pytest.raises(InvalidPrivacyParams):
            laplace_scale(1, eps)


def test_gaussian_sigma_frozen_values():
    assert gaussian_sigma(1, 1, 1e-5) == pytest.approx(SIGMA_1_1_1E5, abs=1e-12)
    assert gaussian_sigma(1, 1, 1e-5) == pytest.approx(4.8449, abs=5e-4)
    assert gaussian_sigma(1, 0.5, 1e-5) == pytest.approx(SIGMA_1_05_1E5, abs=1e-12)


def test_gaussian_sigma_domain():
    with pytest.raises(InvalidPrivacyParams):
        gaussian_sigma(1, 1, 0)  # delta must be positive
    with pytest.raises(InvalidPrivacyParams):
        gaussian_sigma(1, 1.5, 1e-5)  # classical calibration stops at eps = 1
    with pytest.raises(InvalidPrivacyParams):
        gaussian_sigma(1, 0, 1e-5)
    with pytest.raises(InvalidPrivacyParams):
        gaussian_sigma(1, 1, 1.0)


def test_gaussian_sigma_relaxed_extends_domain():
    # coincides with the classical form on its validity range
    assert gaussian_sigma_relaxed(1, 0.5, 1e-5) == gaussian_sigma(1, 0.5, 1e-5)
    # continuous at eps = 1, then strictly below the face-value formula
    at_one = gaussian_sigma(1, 1, 1e-5)
    assert gaussian_sigma_relaxed(1, 1.0000001, 1e-5) == pytest.approx(at_one, rel=1e-5)
    face_value = 1 * math.sqrt(2 * math.log(1.25 / 0.99)) / 100
    assert gaussian_sigma_relaxed(1, 100, 0.99) < face_value
    with pytest.raises(InvalidPrivacyParams):
        gaussian_sigma_relaxed(1, 100, 0)


def test_noise_scales_monotone():
    eps_grid = [0.01, 0.05, 0.1, 0.5, 1.0]
    for lo, hi in zip(eps_grid, eps_grid[1:]):
        assert laplace_scale(1, hi) < laplace_scale(1, lo)
        assert gaussian_sigma(1, hi, 1e-5) < gaussian_sigma(1, lo, 1e-5)
    for s_lo, s_hi in [(0, 1), (1, 2), (2, 65)]:
        assert laplace_scale(s_hi, 1) >= laplace_scale(s_lo, 1)
        assert gaussian_sigma(s_hi, 1, 1e-5) >= gaussian_sigma(s_lo, 1, 1e-5)
    # relaxed scale stays strictly decreasing across the eps = 1 boundary
    grid = [0.5, 1.0, 2.0, 10.0, 100.0]
    values = [gaussian_sigma_relaxed(1, e, 1e-5) for e in grid]
    assert all(a > b for a, b in zip(values, values[1:]))


def test_zero_scale_returns_exact_zero():
    rng = seeded_rng(1)
    assert sample_laplace(rng, 0) == 0.0
    assert sample_gaussian(rng, 0) == 0.0


def test_laplace_monte_carlo_variance():
    # independent oracle: Var[Laplace(0, b)] = 2 b^2
    rng = seeded_rng(20240)
    samples = [sample_laplace(rng, 2.0) for _ in range(100_000)]
    assert statistics.fmean(samples) == pytest.approx(0.0, abs=0.05)
    assert statistics.pvariance(samples) == pytest.approx(8.0, rel=0.05)


def test_gaussian_monte_carlo_variance():
    rng = seeded_rng(20241)
    samples = [sample_gaussian(rng, 3.0) for _ in range(100_000)]
    assert statistics.pvariance(samples) == pytest.approx(9.0, rel=0.05)


def test_samplers_deterministic_under_seeded_rng():
    a = [sample_laplace(seeded_rng(5), 1.0) for _ in range(3)]
    b = [sample_laplace(seeded_rng(5), 1.0) for _ in range(3)]
    assert a == b


def test_private_rng_is_system_random():
    rng = private_rng()
    assert isinstance(rng, random.SystemRandom)
    # sanity: the sampler works with the hardened source
    assert math.isfinite(sample_laplace(rng, 1.0))
    assert math.isfinite(sample_gaussian(rng, 1.0))
