"""Long-run behaviour of the urn: the Beta limit law and a KS check against it.

The risk level of a path converges almost surely to a random limit distributed
as Beta(B0/k, R0/k).  The functions below evaluate that law and test simulated
endpoints against it with a one-sample Kolmogorov-Smirnov statistic.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence, Tuple

import numpy as np

from .urn import UrnParameters

# Asymptotic one-sample KS critical constants: reject when D >= c / sqrt(n).
KS_CRITICAL = {0.05: 1.36, 0.01: 1.63}
MIN_KS_SAMPLE = 100

_CF_MAX_ITER = 10_000
_CF_EPS = 1e-16
_TINY = 1e-300


@dataclass(frozen=True)
class BetaParams:
    alpha: float
    beta: float

    def __post_init__(self):
        if not (self.alpha > 0 and self.beta > 0):
            raise ValueError(f"Beta parameters must be positive, got ({self.alpha}, {self.beta})")


@dataclass(frozen=True)
class GoodnessOfFitResult:
    statistic: float
    sample_size: int
    threshold: float
    passed: bool

    def as_dict(self) -> dict:
        return {
            "statistic": self.statistic,
            "sample_size": self.sample_size,
            "threshold": self.threshold,
            "passed": self.passed,
        }


def limit_distribution(params: UrnParameters) -> BetaParams:
    k = params.increment
    return BetaParams(float(params.blue_initial / k), float(params.red_initial / k))


def log_beta_function(a: float, b: float) -> float:
    return math.lgamma(a) + math.lgamma(b) - math.lgamma(a + b)


def beta_pdf(params: BetaParams, x: float) -> float:
    """Density on the open interval.  Unbounded at the ends when a or b < 1,
    so 0 and 1 are rejected."""
    if not 0.0 < x < 1.0:
        raise ValueError(f"domain error: beta_pdf needs 0 < x < 1, got {x}")
    a, b = params.alpha, params.beta
    log_density = (a - 1.0) * math.log(x) + (b - 1.0) * math.log1p(-x) - log_beta_function(a, b)
    return math.exp(log_density)


def _beta_continued_fraction(a: float, b: float, x: float) -> float:
    # Modified Lentz evaluation of the incomplete-beta continued fraction.
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _TINY:
        d = _TINY
    d = 1.0 / d
    h = d
    for m in range(1, _CF_MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _TINY:
            d = _TINY
        c = 1.0 + aa / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _TINY:
            d = _TINY
        c = 1.0 + aa / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _CF_EPS:
            return h
    raise ArithmeticError(f"incomplete beta continued fraction did not converge (a={a}, b={b}, x={x})")


def beta_cdf(params: BetaParams, x: float) -> float:
    """Regularized incomplete beta function I_x(a, b)."""
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"domain error: beta_cdf needs 0 <= x <= 1, got {x}")
    if x == 0.0:
        return 0.0
    if x == 1.0:
        return 1.0
    a, b = params.alpha, params.beta
    log_front = a * math.log(x) + b * math.log1p(-x) - log_beta_function(a, b)
    front = math.exp(log_front)
    # the fraction converges quickly only below the mean; use symmetry above it
    if x < (a + 1.0) / (a + b + 2.0):
        value = front * _beta_continued_fraction(a, b, x) / a
    else:
        value = 1.0 - front * _beta_continued_fraction(b, a, 1.0 - x) / b
    return min(max(value, 0.0), 1.0)


def beta_cdf_array(params: BetaParams, xs) -> np.ndarray:
    return np.array([beta_cdf(params, float(x)) for x in np.asarray(xs, dtype=float)])


def beta_moments(params: BetaParams) -> Tuple[float, float]:
    a, b = params.alpha, params.beta
    s = a + b
    return a / s, a * b / (s * s * (s + 1.0))


def ks_statistic(samples: Sequence[float], cdf: Callable[[float], float]) -> float:
    """Two-sided one-sample KS distance of sorted ``samples`` from ``cdf``."""
    xs = np.asarray(samples, dtype=float)
    n = xs.size
    if n == 0:
        raise ValueError("ks_statistic needs a nonempty sample")
    if np.any(np.diff(xs) < 0):
        raise ValueError("ks_statistic expects sorted samples")
    fitted = np.array([cdf(float(x)) for x in xs])
    ranks = np.arange(1, n + 1)
    d_plus = np.max(ranks / n - fitted)
    d_minus = np.max(fitted - (ranks - 1) / n)
    return float(max(d_plus, d_minus, 0.0))


def ks_threshold(significance: float, n: int) -> float:
    try:
        return KS_CRITICAL[significance] / math.sqrt(n)
    except KeyError:
        raise ValueError(
            f"significance must be one of {sorted(KS_CRITICAL)}, got {significance}"
        ) from None


def fit_limit_law(trajectory_endpoints: Sequence[float], params: UrnParameters,
                  significance: float = 0.01) -> GoodnessOfFitResult:
    """KS test of path endpoints against the Beta limit law of ``params``."""
    endpoints = np.sort(np.asarray(trajectory_endpoints, dtype=float))
    n = endpoints.size
    if n < MIN_KS_SAMPLE:
        raise ValueError(
            f"sample too small for asymptotic KS threshold: {n} < {MIN_KS_SAMPLE}"
        )
    threshold = ks_threshold(significance, n)
    law = limit_distribution(params)
    statistic = ks_statistic(endpoints, lambda x: beta_cdf(law, x))
    return GoodnessOfFitResult(statistic, int(n), threshold, statistic < threshold)
