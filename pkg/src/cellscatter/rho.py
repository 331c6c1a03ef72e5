"""Loss functions for the generalized S-estimators.

Both families are written as functions of a scaled squared distance ``u``:
Tukey's bisquare ``min(1, 1 - (1 - u)^3)`` and the modified Rocke rho, which
is flat at 0 below ``1 - gamma`` and at 1 above ``1 + gamma``.  The weight
function is the derivative with respect to ``u``.
"""

import functools
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from . import _kernels
from .robust import chi2_cdf, chi2_pdf, chi2_quantile

TUKEY = "tukey_bisquare"
ROCKE = "rocke"
_FAMILY_CODE = {TUKEY: _kernels.TUKEY, ROCKE: _kernels.ROCKE}


def rocke_gamma(p, alpha=0.05):
    """Half-width of the Rocke weight window for dimension ``p``."""
    if p < 1:
        raise ValueError("dimension must be >= 1")
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    g = min(chi2_quantile(1.0 - alpha, p) / p - 1.0, 1.0)
    if not g > 0.0:
        raise ValueError(f"nonpositive Rocke gamma for p={p}, alpha={alpha}")
    return g


@dataclass(frozen=True)
class RhoSpec:
    """Loss family, target ``b`` and the Rocke level; constants are derived."""

    family: str = TUKEY
    b: float = 0.5
    rocke_alpha: float = 0.05

    def __post_init__(self):
        if self.family not in _FAMILY_CODE:
            raise ValueError(f"unknown rho family {self.family!r}")
        if not 0.0 < self.b < 1.0:
            raise ValueError("b must lie in (0, 1)")

    @property
    def code(self):
        return _FAMILY_CODE[self.family]

    def gamma(self, dim):
        if self.family != ROCKE:
            return 1.0
        return rocke_gamma(dim, self.rocke_alpha)

    def gamma_by_dim(self, p):
        return {k: self.gamma(k) for k in range(1, p + 1)}

    def c_by_dim(self, p):
        return {k: tuning_constant(k, self) for k in range(1, p + 1)}

    def max_weight(self, dim):
        if self.family == TUKEY:
            return 3.0
        return 3.0 / (4.0 * self.gamma(dim))


def rho(u, spec, dim=1):
    """rho(u) for u >= 0; accepts scalars or arrays."""
    out = _kernels.rho_array(u, spec.code, spec.gamma(dim))
    return float(out) if np.ndim(out) == 0 else out


def weight(u, spec, dim=1):
    """d rho / d u, which vanishes outside the support of the loss."""
    u = np.asarray(u, dtype=float)
    if spec.family == TUKEY:
        out = np.where(u <= 1.0, 3.0 * (1.0 - u) ** 2, 0.0)
    else:
        g = spec.gamma(dim)
        z = (u - 1.0) / g
        out = np.where(np.abs(u - 1.0) <= g, 0.75 / g * (1.0 - z * z), 0.0)
    return float(out) if out.ndim == 0 else out


def _expected_rho(c, k, family, gamma):
    # E[rho(Z / c)] for Z ~ chi2_k, integrating only where rho is not constant
    if family == TUKEY:
        lo, hi = 0.0, c
    else:
        lo, hi = c * (1.0 - gamma), c * (1.0 + gamma)
    code = _FAMILY_CODE[family]

    def integrand(z):
        return _kernels.rho_array(z / c, code, gamma) * chi2_pdf(z, k)

    val, _ = integrate.quad(integrand, lo, hi, epsabs=1e-14, epsrel=1e-12, limit=200)
    return float(val) + (1.0 - chi2_cdf(hi, k))


@functools.lru_cache(maxsize=None)
def _tuning_constant(k, family, b, gamma):
    # E[rho(Z / c)] falls from 1 to 0 as c grows
    lo = hi = float(k)
    while _expected_rho(hi, k, family, gamma) > b:
        lo = hi
        hi *= 2.0
    while _expected_rho(lo, k, family, gamma) < b:
        hi = lo
        lo *= 0.5
        if lo < 1e-300:
            raise ArithmeticError("could not bracket the tuning constant")
    while hi - lo > 1e-10 * hi:
        mid = 0.5 * (lo + hi)
        if _expected_rho(mid, k, family, gamma) > b:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def tuning_constant(k, spec):
    """c_k with E[rho(Z / c_k)] = b for Z ~ chi-square(k)."""
    if k < 1:
        raise ValueError("dimension must be >= 1")
    return _tuning_constant(int(k), spec.family, float(spec.b), float(spec.gamma(k)))


def rho_inverse_tukey(b):
    """u with 1 - (1 - u)^3 = b."""
    return 1.0 - (1.0 - b) ** (1.0 / 3.0)


def chi2_median(k):
    return chi2_quantile(0.5, k)


__all__ = [
    "TUKEY",
    "ROCKE",
    "RhoSpec",
    "rho",
    "weight",
    "rocke_gamma",
    "tuning_constant",
    "rho_inverse_tukey",
    "chi2_median",
]
