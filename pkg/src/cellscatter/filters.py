"""Consistent cell filters: univariate (UF), bivariate (BF), their combination
UBF, and the union / intersection / conditioning combinators.

Filters never impute.  They return an observation mask in which flagged
cells are set to False, ready for the incomplete-data estimators.
"""

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset
from .errors import DegenerateError, InputError
from .robust import (
    MAD_CONSTANT,
    binom_quantile,
    chi2_2_cdf,
    chi2_quantile,
    half_normal_cdf,
)

__all__ = [
    "FilterConfig",
    "FilterReport",
    "FlagSource",
    "exceedance_proportion",
    "univariate_filter",
    "bivariate_filter",
    "uf",
    "ubf",
    "combine_filters",
    "condition_filter",
    "external_filter_adapter",
    "read_mask_file",
]


class FlagSource(enum.IntEnum):
    NONE = 0
    UF = 1
    BF = 2
    EXTERNAL = 3
    INTERSECTION = 4


@dataclass(frozen=True)
class FilterConfig:
    alpha_uni: float = 0.95
    alpha_biv: float = 0.85
    delta: float = 0.10
    binom_level: float = 0.99
    uni_reference: str = "normal"
    biv_reference: str = "chi2_2"

    def __post_init__(self):
        for name in ("alpha_uni", "alpha_biv", "delta", "binom_level"):
            value = getattr(self, name)
            if not 0.0 < value < 1.0:
                raise ValueError(f"{name} must lie in (0, 1), got {value}")
        if self.uni_reference != "normal":
            raise ValueError("only the standard normal univariate reference is supported")
        if self.biv_reference != "chi2_2":
            raise ValueError("only the chi-square(2) bivariate reference is supported")


@dataclass
class FilterReport:
    mask: np.ndarray
    flagged_by: np.ndarray
    per_column_fraction: np.ndarray
    m_counts: np.ndarray
    c_counts: np.ndarray
    skipped_pairs: list = field(default_factory=list)

    @property
    def n_flagged(self):
        return int(np.count_nonzero(self.flagged_by != FlagSource.NONE))

    def flagged_cells(self):
        """(row, col) index pairs of flagged cells in row-major order."""
        return np.argwhere(self.flagged_by != FlagSource.NONE)


def exceedance_proportion(stat, cdf, eta):
    """sup_{t >= eta} {F(t) - F_n(t)}^+ for the ECDF F_n of ``stat``.

    F - F_n increases between jumps of F_n, so the supremum is the larger of
    the value at ``eta`` and the left limits at the observations above eta.
    """
    s = np.sort(np.asarray(stat, dtype=float))
    n = s.size
    if n == 0:
        return 0.0
    at_eta = float(cdf(np.array([eta]))[0]) - np.searchsorted(s, eta, side="right") / n
    tail = s[np.searchsorted(s, eta, side="right"):]
    best = at_eta
    if tail.size:
        below = np.searchsorted(s, tail, side="left")
        best = max(best, float(np.max(cdf(tail) - below / n)))
    return min(max(best, 0.0), 1.0)


def _flag_largest(stat, count):
    flags = np.zeros(stat.size, dtype=bool)
    if count > 0:
        order = np.argsort(stat, kind="stable")
        flags[order[stat.size - count:]] = True
    return flags


def _n_flag(n, d):
    return int(math.floor(n * d + 1e-12))


def univariate_filter(column, cfg=None):
    """Flag cells of one column whose standardized size is excessive.

    Values are standardized by median and normalized MAD; the number of
    flags is floor(n d_n) with d_n from the half-normal reference.
    Returns a boolean array aligned with ``column``.
    """
    cfg = cfg or FilterConfig()
    x = np.asarray(column, dtype=float).ravel()
    if x.size < 2:
        raise ValueError("univariate filter needs at least 2 observed values")
    med = np.median(x)
    scale = MAD_CONSTANT * np.median(np.abs(x - med))
    if not scale > 0.0:
        raise DegenerateError("degenerate column dispersion")
    z = np.abs(x - med) / scale
    eta = math.sqrt(chi2_quantile(cfg.alpha_uni, 1))
    d = exceedance_proportion(z, half_normal_cdf, eta)
    return _flag_largest(z, _n_flag(z.size, d))


def bivariate_filter(distances, alpha=0.85):
    """Flag the floor(n d_n) largest pairwise squared distances (chi2_2 reference)."""
    d = np.asarray(distances, dtype=float).ravel()
    if d.size < 2:
        raise ValueError("bivariate filter needs at least 2 distances")
    if np.any(d < 0.0) or not np.all(np.isfinite(d)):
        raise ValueError("distances must be finite and nonnegative")
    eta = -2.0 * math.log1p(-alpha)
    prop = exceedance_proportion(d, chi2_2_cdf, eta)
    return _flag_largest(d, _n_flag(d.size, prop))


def _column_center_scale(x, u):
    p = x.shape[1]
    med = np.zeros(p)
    scale = np.zeros(p)
    for j in range(p):
        col = x[u[:, j], j]
        if col.size < 2:
            raise DegenerateError(f"column {j} has fewer than 2 observed values")
        med[j] = np.median(col)
        scale[j] = MAD_CONSTANT * np.median(np.abs(col - med[j]))
        if not scale[j] > 0.0:
            raise DegenerateError(f"degenerate column dispersion (column {j})")
    return med, scale


def _mad(v):
    return MAD_CONSTANT * np.median(np.abs(v - np.median(v)))


def _uf_pass(data, cfg):
    u = data.u
    flags = np.zeros(u.shape, dtype=bool)
    for j in range(data.p):
        rows = np.nonzero(u[:, j])[0]
        flags[rows, j] = univariate_filter(data.x[rows, j], cfg)
    return flags


def _report(data, uf_flags, bf_flags, m, c, skipped):
    mask = data.u & ~uf_flags & ~bf_flags
    flagged_by = np.full(data.u.shape, FlagSource.NONE, dtype=np.int8)
    flagged_by[uf_flags] = FlagSource.UF
    flagged_by[bf_flags] = FlagSource.BF
    observed = data.u.sum(axis=0)
    flagged = (uf_flags | bf_flags).sum(axis=0)
    frac = np.divide(flagged, observed, out=np.zeros(data.p), where=observed > 0)
    return FilterReport(mask, flagged_by, frac, m, c, skipped)


def uf(data, cfg=None):
    """The univariate filter applied to every column."""
    cfg = cfg or FilterConfig()
    _column_center_scale(data.x, data.u)
    flags = _uf_pass(data, cfg)
    zeros = np.zeros(data.u.shape, dtype=np.int64)
    return _report(data, flags, np.zeros_like(flags), zeros, zeros.copy(), [])


def ubf(data, cfg=None):
    """Univariate-and-bivariate filter.

    1. UF on every column.
    2. For each pair of columns, pairwise squared Mahalanobis distances of the
       rows observed in both (after UF), from coordinate-wise medians and the
       Gnanadesikan-Kettenring matrix of the standardized columns; BF flags
       the outlying pairs.
    3. Cell (i, j) is flagged when the number of flagged pairs it belongs to
       exceeds the ``binom_level`` quantile of Bin(#partners, delta).
    """
    cfg = cfg or FilterConfig()
    x, u = data.x, data.u
    n, p = x.shape
    med, scale = _column_center_scale(x, u)
    uf_flags = _uf_pass(data, cfg)
    u1 = u & ~uf_flags
    z = (x - med) / scale
    m = np.zeros((n, p), dtype=np.int64)
    partners = np.zeros((n, p), dtype=np.int64)
    skipped = []
    for j in range(p):
        for k in range(j + 1, p):
            rows = np.nonzero(u1[:, j] & u1[:, k])[0]
            if rows.size < 3:
                skipped.append((j, k, "too few jointly observed rows"))
                continue
            zj = z[rows, j]
            zk = z[rows, k]
            cjj = _mad(zj) ** 2
            ckk = _mad(zk) ** 2
            cjk = 0.25 * (_mad(zj + zk) ** 2 - _mad(zj - zk) ** 2)
            det = cjj * ckk - cjk * cjk
            if not (cjj > 0.0 and ckk > 0.0) or det <= 1e-12 * cjj * ckk:
                skipped.append((j, k, "singular pairwise scatter"))
                continue
            rj = zj - np.median(zj)
            rk = zk - np.median(zk)
            dist = (ckk * rj * rj - 2.0 * cjk * rj * rk + cjj * rk * rk) / det
            # cancellation can leave tiny negatives
            dist = np.maximum(dist, 0.0)
            flagged = rows[bivariate_filter(dist, cfg.alpha_biv)]
            m[flagged, j] += 1
            m[flagged, k] += 1
            partners[u1[:, k], j] += 1
            partners[u1[:, j], k] += 1
    c = np.zeros((n, p), dtype=np.int64)
    cache = {}
    for i in range(n):
        for j in range(p):
            if not u1[i, j]:
                continue
            key = int(partners[i, j])
            if key not in cache:
                cache[key] = binom_quantile(key, cfg.delta, cfg.binom_level)
            c[i, j] = cache[key]
    bf_flags = u1 & (m > c)
    return _report(data, uf_flags, bf_flags, m, c, skipped)


def _as_masks(masks):
    arrs = [np.asarray(mk).astype(bool) for mk in masks]
    if not arrs:
        raise ValueError("no masks given")
    shape = arrs[0].shape
    for a in arrs[1:]:
        if a.shape != shape:
            raise InputError("mask dimension mismatch")
    return arrs


def combine_filters(masks, mode="union"):
    """Combine observation masks (False = flagged).

    ``union`` flags a cell flagged by any filter; ``intersection`` only the
    cells flagged by all of them.  Cells missing on input should be re-applied
    by the caller after an intersection.
    """
    arrs = _as_masks(masks)
    if mode == "union":
        return np.logical_and.reduce(arrs)
    if mode == "intersection":
        return np.logical_or.reduce(arrs)
    raise ValueError(f"mode must be 'union' or 'intersection', got {mode!r}")


def condition_filter(mask, condition):
    """Keep only the flags of ``mask`` at cells where ``condition`` holds."""
    mask, condition = _as_masks([mask, condition])
    return mask | ~condition


def read_mask_file(path):
    """Parse a 0/1 matrix (comma or whitespace separated, no header)."""
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            tokens = line.replace(",", " ").split()
            try:
                values = [int(t) for t in tokens]
            except ValueError:
                raise InputError(f"mask file line {lineno}: non-integer entry") from None
            if any(v not in (0, 1) for v in values):
                raise InputError(f"mask file line {lineno}: entries must be 0 or 1")
            if rows and len(values) != len(rows[0]):
                raise InputError("mask dimension mismatch")
            rows.append(values)
    if not rows:
        raise InputError("mask file is empty")
    return np.array(rows, dtype=bool)


def external_filter_adapter(data, mask_file):
    """Load an externally produced observation mask for ``data``."""
    mask = read_mask_file(mask_file)
    if mask.shape != data.u.shape:
        raise InputError("mask dimension mismatch")
    return mask
