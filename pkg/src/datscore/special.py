"""Shared numerical primitives: normal-law helpers and the Student-t tail.

The t tail is implemented from scratch (regularized incomplete beta via a
Lentz continued fraction) so that library CDFs remain available as an
independent cross-check in the test suite.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import erfcx, gammaln, log_ndtr, ndtr

from .errors import ValidationError

_SQRT_2PI = math.sqrt(2.0 * math.pi)

# Growable log-factorial table; index k holds log(k!).
_LOG_FACT = np.zeros(1)


def log_factorials(n: int) -> np.ndarray:
    """Return an array L of length n+1 with L[k] = log(k!)."""
    global _LOG_FACT
    if n >= _LOG_FACT.size:
        size = max(n + 1, 2 * _LOG_FACT.size)
        _LOG_FACT = gammaln(np.arange(size, dtype=np.float64) + 1.0)
    return _LOG_FACT[: n + 1]


def norm_pdf(x):
    x = np.asarray(x, dtype=np.float64)
    return np.exp(-0.5 * x * x) / _SQRT_2PI


def norm_cdf(x):
    return ndtr(x)


def norm_logcdf(x):
    return log_ndtr(x)


def mills_ratio(x):
    """phi(x) / Phi(x), numerically stable for arbitrarily negative x.

    For x beyond ~+38 the scaled erfc overflows; the ratio is then an
    exact zero, which is the correct limit.
    """
    x = np.asarray(x, dtype=np.float64)
    with np.errstate(over="ignore"):
        return math.sqrt(2.0 / math.pi) / erfcx(-x / math.sqrt(2.0))


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta function (modified Lentz)."""
    max_iter = 500
    eps = 1e-16
    fpmin = 1e-300
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < fpmin:
        d = fpmin
    d = 1.0 / d
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < fpmin:
            d = fpmin
        c = 1.0 + aa / c
        if abs(c) < fpmin:
            c = fpmin
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < fpmin:
            d = fpmin
        c = 1.0 + aa / c
        if abs(c) < fpmin:
            c = fpmin
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < eps:
            return h
    return h


def betainc_reg(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta I_x(a, b) for a, b > 0 and x in [0, 1]."""
    if a <= 0.0 or b <= 0.0:
        raise ValidationError(f"beta parameters must be positive, got a={a}, b={b}")
    if x < 0.0 or x > 1.0:
        raise ValidationError(f"x must lie in [0, 1], got {x}")
    if x == 0.0:
        return 0.0
    if x == 1.0:
        return 1.0
    ln_front = (
        math.lgamma(a + b)
        - math.lgamma(a)
        - math.lgamma(b)
        + a * math.log(x)
        + b * math.log1p(-x)
    )
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def student_t_sf(t: float, df: float) -> float:
    """Upper-tail probability P(T > t) for Student's t with df > 0."""
    if df <= 0.0 or not math.isfinite(df):
        raise ValidationError(f"degrees of freedom must be positive, got {df}")
    if math.isnan(t):
        return math.nan
    if math.isinf(t):
        return 0.0 if t > 0 else 1.0
    x = df / (df + t * t)
    half_two_sided = 0.5 * betainc_reg(0.5 * df, 0.5, x)
    return half_two_sided if t >= 0.0 else 1.0 - half_two_sided


def student_t_two_sided(t: float, df: float) -> float:
    """Two-sided tail probability P(|T| > |t|)."""
    if df <= 0.0 or not math.isfinite(df):
        raise ValidationError(f"degrees of freedom must be positive, got {df}")
    if math.isnan(t):
        return math.nan
    if math.isinf(t):
        return 0.0
    return betainc_reg(0.5 * df, 0.5, df / (df + t * t))


def project_to_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection of a vector onto the probability simplex."""
    v = np.asarray(v, dtype=np.float64)
    n = v.size
    u = np.sort(v)[::-1]
    css = np.cumsum(u)
    rho = np.nonzero(u * np.arange(1, n + 1) > (css - 1.0))[0][-1]
    theta = (css[rho] - 1.0) / (rho + 1.0)
    w = np.maximum(v - theta, 0.0)
    return w / w.sum()
