"""Independent reference computations used to freeze expected values in the tests.

None of these import the package under test.
"""

from __future__ import annotations

import math
from decimal import Decimal, getcontext

import numpy as np

MASK64 = (1 << 64) - 1


def singular_values_2x2(m) -> tuple[float, float]:
    """Square roots of the eigenvalues of M^T M by the quadratic formula."""
    (a, b), (c, d) = m
    t = a * a + b * b + c * c + d * d  # trace of M^T M
    det = (a * d - b * c) ** 2
    disc = math.sqrt(max(t * t - 4.0 * det, 0.0))
    return math.sqrt((t + disc) / 2.0), math.sqrt(max((t - disc) / 2.0, 0.0))


def logistic_decimal(z: float, digits: int = 50) -> float:
    getcontext().prec = digits
    x = Decimal(z)
    return float((Decimal(1) + (-x).exp()).ln())


def splitmix64_scalar(key: int, counter: int) -> int:
    """Textbook SplitMix64 output for state ``key + counter * golden``."""
    z = (key + counter * 0x9E3779B97F4A7C15) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def central_difference(f, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    g = np.empty_like(x)
    flat = g.reshape(-1)
    for i in range(x.size):
        e = np.zeros(x.size)
        e[i] = h
        e = e.reshape(x.shape)
        flat[i] = (f(x + e) - f(x - e)) / (2.0 * h)
    return g


def bisect(f, lo: float, hi: float, iters: int = 200) -> float:
    flo = f(lo)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if (fm > 0) == (flo > 0):
            lo, flo = mid, fm
        else:
            hi = mid
    return 0.5 * (lo + hi)


def ridge_logistic_1d() -> float:
    """Minimizer of ln(1 + exp(-w)) + w^2 / 2: the root of w = 1 / (1 + exp(w))."""
    return bisect(lambda w: w - 1.0 / (1.0 + math.exp(w)), 0.0, 1.0)


if __name__ == "__main__":
    print("ridge logistic 1-D", repr(ridge_logistic_1d()))
    print("sv [[1,2],[3,4]]", repr(singular_values_2x2([[1, 2], [3, 4]])))
    print("logistic(-10)", repr(logistic_decimal(-10.0)))
    print("logistic(50)", repr(logistic_decimal(50.0)))
    print("splitmix64(1234567, 1..3)", [splitmix64_scalar(1234567, k) for k in (1, 2, 3)])
