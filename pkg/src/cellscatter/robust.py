"""Scalar and pairwise robust statistics plus the chi-square and binomial
distribution functions used throughout the package.

Everything here is a pure function of its arguments.
"""

import functools
import math

import numpy as np

from . import _kernels
from .errors import DegenerateError

MAD_CONSTANT = 1.4826
QN_CONSTANT = 2.2219

__all__ = [
    "MAD_CONSTANT",
    "QN_CONSTANT",
    "median",
    "mad",
    "qn",
    "gk_cov",
    "chi2_cdf",
    "chi2_pdf",
    "chi2_quantile",
    "binom_quantile",
]


def _sample(values, min_len, what):
    x = np.asarray(values, dtype=float).ravel()
    if x.size == 0:
        raise ValueError("empty sample")
    if x.size < min_len:
        raise ValueError(f"{what} needs at least {min_len} values, got {x.size}")
    if not np.all(np.isfinite(x)):
        raise ValueError("sample contains NaN or infinite values")
    return x


def median(values):
    """Sample median; the midpoint of the central pair for even length."""
    return float(np.median(_sample(values, 1, "median")))


def mad(values, normalized=True):
    """Median absolute deviation about the median.

    With ``normalized`` the raw MAD is multiplied by 1.4826 so that it
    estimates the standard deviation at the normal model.
    """
    x = _sample(values, 2, "mad")
    raw = float(np.median(np.abs(x - np.median(x))))
    return MAD_CONSTANT * raw if normalized else raw


def qn(values):
    """Rousseeuw-Croux Qn scale with the asymptotic constant only.

    The k-th smallest of the n(n-1)/2 absolute pairwise differences with
    k = C(h, 2), h = n // 2 + 1.
    """
    x = _sample(values, 2, "qn")
    n = x.size
    h = n // 2 + 1
    k = h * (h - 1) // 2
    return QN_CONSTANT * float(_kernels.kth_pairwise_diff(x, k))


def _dispersion(scale):
    if callable(scale):
        return scale
    key = str(scale).lower()
    if key == "mad":
        return mad
    if key == "qn":
        return qn
    raise ValueError(f"unknown dispersion estimator {scale!r}; use 'mad' or 'qn'")


def gk_cov(x, y, scale="mad"):
    """Gnanadesikan-Kettenring covariance 1/4 (S(x+y)^2 - S(x-y)^2)."""
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if x.shape != y.shape:
        raise ValueError(f"length mismatch: {x.size} vs {y.size}")
    s = _dispersion(scale)
    return 0.25 * (s(x + y) ** 2 - s(x - y) ** 2)


# ---------------------------------------------------------------------------
# chi-square via the regularized incomplete gamma function

_EPS = 1e-16
_TINY = 1e-300


def _gamma_p_series(a, x):
    ap = a
    term = 1.0 / a
    total = term
    for _ in range(10000):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * _EPS:
            break
    return total * math.exp(-x + a * math.log(x) - math.lgamma(a))


def _gamma_q_contfrac(a, x):
    # modified Lentz evaluation of the continued fraction for Q(a, x)
    b = x + 1.0 - a
    c = 1.0 / _TINY
    d = 1.0 / b
    h = d
    for i in range(1, 10000):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < _TINY:
            d = _TINY
        c = b + an / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            break
    return math.exp(-x + a * math.log(x) - math.lgamma(a)) * h


def _gamma_p(a, x):
    if x <= 0.0:
        return 0.0
    if x < a + 1.0:
        return _gamma_p_series(a, x)
    return 1.0 - _gamma_q_contfrac(a, x)


def _check_df(k):
    if int(k) != k or k < 1:
        raise ValueError(f"degrees of freedom must be a positive integer, got {k}")
    return int(k)


def chi2_cdf(t, k):
    """P(X <= t) for X ~ chi-square with k degrees of freedom."""
    k = _check_df(k)
    t = float(t)
    if t <= 0.0:
        return 0.0
    if math.isinf(t):
        return 1.0
    return _gamma_p(0.5 * k, 0.5 * t)


def chi2_pdf(t, k):
    k = _check_df(k)
    t = float(t)
    if t < 0.0:
        return 0.0
    if t == 0.0:
        if k == 1:
            return math.inf
        return 0.5 if k == 2 else 0.0
    a = 0.5 * k
    return math.exp((a - 1.0) * math.log(t) - 0.5 * t - a * math.log(2.0) - math.lgamma(a))


def chi2_quantile(p, k):
    """Inverse of :func:`chi2_cdf`: bracketing bisection, then Newton polish."""
    return _chi2_quantile(float(p), _check_df(k))


@functools.lru_cache(maxsize=4096)
def _chi2_quantile(p, k):
    if not 0.0 < p < 1.0:
        raise ValueError(f"probability must lie in (0, 1), got {p}")
    hi = float(k)
    while chi2_cdf(hi, k) < p:
        hi *= 2.0
    lo = hi
    while chi2_cdf(lo, k) >= p:
        lo *= 0.5
    # geometric bisection to a loose relative width
    while hi - lo > 1e-4 * hi:
        mid = math.sqrt(lo * hi) if lo > 0.0 else 0.5 * hi
        if chi2_cdf(mid, k) < p:
            lo = mid
        else:
            hi = mid
    t = 0.5 * (lo + hi)
    for _ in range(100):
        f = chi2_cdf(t, k) - p
        if f == 0.0:
            return t
        # shrink the bracket at t first, so a rejected step cannot stall on t
        if f < 0.0:
            lo = t
        else:
            hi = t
        dens = chi2_pdf(t, k)
        new = t - f / dens if dens > 0.0 and math.isfinite(dens) else lo
        if not lo < new < hi:
            new = 0.5 * (lo + hi)
        if abs(new - t) <= 1e-15 * new:
            return new
        t = new
    return t


def binom_quantile(n, prob, level):
    """Smallest c with P(Bin(n, prob) <= c) >= level, by exact summation."""
    if int(n) != n or n < 0:
        raise ValueError(f"n must be a nonnegative integer, got {n}")
    n = int(n)
    if not 0.0 <= prob <= 1.0:
        raise ValueError(f"prob must lie in [0, 1], got {prob}")
    if not 0.0 < level <= 1.0:
        raise ValueError(f"level must lie in (0, 1], got {level}")
    if n == 0 or prob == 0.0:
        return 0
    if prob == 1.0:
        return n
    terms = []
    for c in range(n + 1):
        terms.append(math.comb(n, c) * prob**c * (1.0 - prob) ** (n - c))
        if math.fsum(terms) >= level:
            return c
    return n


def half_normal_cdf(t):
    """CDF of |Z| for standard normal Z, vectorized."""
    t = np.asarray(t, dtype=float)
    erf = np.vectorize(math.erf, otypes=[float])
    return np.where(t > 0.0, erf(t / math.sqrt(2.0)), 0.0)


def chi2_2_cdf(t):
    """Closed-form chi-square(2) CDF, vectorized."""
    t = np.asarray(t, dtype=float)
    return np.where(t > 0.0, -np.expm1(-0.5 * np.maximum(t, 0.0)), 0.0)


def check_dispersion(value, what="column"):
    if not value > 0.0:
        raise DegenerateError(f"degenerate {what} dispersion")
    return value
