"""Logistic loss on the margin ``z = y f(x)`` and its derivative."""

from __future__ import annotations

import numpy as np

from .rng import derive_seed, uniforms

__all__ = [
    "logistic",
    "logistic_prime",
    "logistic_prime_complement",
    "logistic_second",
    "decay_slack",
    "convexity_slack",
    "prime_concavity_slack",
    "prime_range",
]


def logistic(z):
    """``ln(1 + exp(-z))`` as ``max(-z, 0) + log1p(exp(-|z|))``; no overflow for any finite z."""
    z = np.asarray(z, dtype=np.float64)
    return np.maximum(-z, 0.0) + np.log1p(np.exp(-np.abs(z)))


def logistic_prime(z):
    """``-1 / (1 + exp(z))``, evaluated without overflow."""
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, -e / (1.0 + e), -1.0 / (1.0 + e))


def logistic_prime_complement(z):
    """``1 + logistic_prime(z)`` (the sigmoid), free of cancellation for very negative z."""
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def logistic_second(z):
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(-np.abs(z))
    return e / (1.0 + e) ** 2


def _trial_uniforms(seed: int, purpose: str, n: int, width: int) -> np.ndarray:
    return uniforms(derive_seed(seed, purpose), 0, n, width)


def decay_slack(n_trials: int = 10_000, seed: int = 0, z_range: float = 30.0, c_max: float = 20.0) -> float:
    """Worst ``l'(z + c) - exp(-c) l'(z)`` over random ``z`` and ``c > 0``; should be <= 0."""
    u = _trial_uniforms(seed, "loss/decay", n_trials, 2)
    z = z_range * (2.0 * u[:, 0] - 1.0)
    c = c_max * u[:, 1]
    return float(np.max(logistic_prime(z + c) - np.exp(-c) * logistic_prime(z)))


def convexity_slack(n_trials: int = 10_000, seed: int = 0, z_range: float = 50.0) -> float:
    """Worst ``l(mid) - (l(z1) + l(z2)) / 2``; should be <= 0."""
    u = _trial_uniforms(seed, "loss/convexity", n_trials, 2)
    z1, z2 = z_range * (2.0 * u.T - 1.0)
    return float(np.max(logistic(0.5 * (z1 + z2)) - 0.5 * (logistic(z1) + logistic(z2))))


def prime_concavity_slack(n_trials: int = 10_000, seed: int = 0, z_max: float = 50.0) -> float:
    """Worst ``(l'(z1) + l'(z2)) / 2 - l'(mid)`` for ``z1, z2 >= 0``; should be <= 0."""
    u = _trial_uniforms(seed, "loss/concavity", n_trials, 2)
    z1, z2 = z_max * u.T
    return float(np.max(0.5 * (logistic_prime(z1) + logistic_prime(z2)) - logistic_prime(0.5 * (z1 + z2))))


def prime_range(z: np.ndarray) -> tuple[float, float]:
    """``(max l'(z), min (1 + l'(z)))``; both must be strictly on the right side of 0 for l' in (-1, 0)."""
    return float(np.max(logistic_prime(z))), float(np.min(logistic_prime_complement(z)))
