"""Noise mechanisms: scale calibration and samplers.

Laplace serves pure-epsilon requests (delta = 0); Gaussian serves
approximate-DP requests (delta > 0) with the classical closed-form sigma,
whose guarantee is only valid for epsilon <= 1 — larger epsilons are
rejected on the private path. Private executions must draw from a
cryptographically strong source; dummy executions may be seeded.
"""

from __future__ import annotations

import math
import random

from .errors import InvalidPrivacyParams


def laplace_scale(sensitivity: float, epsilon: float) -> float:
    """Scale b = sensitivity / epsilon; zero sensitivity means exact release."""
    if not (isinstance(epsilon, (int, float)) and math.isfinite(epsilon) and epsilon > 0):
        raise InvalidPrivacyParams(f"epsilon must be positive and finite, got {epsilon!r}")
    if sensitivity < 0:
        raise ValueError("sensitivity must be non-negative")
    return sensitivity / epsilon


def gaussian_sigma(sensitivity: float, epsilon: float, delta: float) -> float:
    """Classical Gaussian calibration: sigma = sensitivity * sqrt(2 ln(1.25/delta)) / epsilon.

    Valid only for 0 < epsilon <= 1 and 0 < delta < 1; anything else is
    rejected rather than silently producing an invalid guarantee.
    """
    if not (isinstance(delta, (int, float)) and 0 < delta < 1):
        raise InvalidPrivacyParams(f"gaussian mechanism requires 0 < delta < 1, got {delta!r}")
    if not (isinstance(epsilon, (int, float)) and math.isfinite(epsilon) and 0 < epsilon <= 1):
        raise InvalidPrivacyParams(
            f"gaussian mechanism requires 0 < epsilon <= 1, got {epsilon!r}")
    if sensitivity < 0:
        raise ValueError("sensitivity must be non-negative")
    return sensitivity * math.sqrt(2.0 * math.log(1.25 / delta)) / epsilon


def gaussian_sigma_relaxed(sensitivity: float, epsilon: float, delta: float) -> float:
    """Gaussian scale for dummy-data executions, defined for every epsilon > 0.

    Coincides with the classical calibration on its validity range
    (epsilon <= 1). Beyond it no (epsilon, delta) guarantee is claimed —
    dummy data is synthetic and public — so the noise decays quadratically
    in epsilon, making high-epsilon dummy runs consistency checks with
    negligible (but still random) perturbation. Continuous and strictly
    decreasing in epsilon.
    """
    if not (isinstance(epsilon, (int, float)) and math.isfinite(epsilon) and epsilon > 0):
        raise InvalidPrivacyParams(f"epsilon must be positive and finite, got {epsilon!r}")
    if epsilon <= 1:
        return gaussian_sigma(sensitivity, epsilon, delta)
    if not (isinstance(delta, (int, float)) and 0 < delta < 1):
        raise InvalidPrivacyParams(f"gaussian mechanism requires 0 < delta < 1, got {delta!r}")
    if sensitivity < 0:
        raise ValueError("sensitivity must be non-negative")
    return sensitivity * math.sqrt(2.0 * math.log(1.25 / delta)) / (epsilon * epsilon)


def sample_laplace(rng, scale: float) -> float:
    """Laplace(0, scale) via inverse CDF on one uniform draw; scale 0 -> 0.0."""
    if scale < 0:
        raise ValueError("scale must be non-negative")
    if scale == 0:
        return 0.0
    u = rng.random()
    while u == 0.0:  # keep log() finite; probability 2^-53 per draw
        u = rng.random()
    if u < 0.5:
        return scale * math.log(2.0 * u)
    return -scale * math.log(2.0 * (1.0 - u))


def sample_gaussian(rng, sigma: float) -> float:
    """Normal(0, sigma^2); sigma 0 -> 0.0."""
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    if sigma == 0:
        return 0.0
    return rng.gauss(0.0, sigma)


def private_rng() -> random.SystemRandom:
    """OS-entropy generator for executions on private data (never seedable)."""
    return random.SystemRandom()


def seeded_rng(seed: int) -> random.Random:
    """Deterministic generator for reproducible dummy-data executions."""
    return random.Random(seed)
