"""Data matrix with its observation mask, and missingness-pattern grouping."""

from dataclasses import dataclass, field

import numpy as np

from .errors import InputError


@dataclass(frozen=True)
class Dataset:
    """An n x p matrix ``x`` with mask ``u`` (True = observed).

    Values at masked cells are never read; they are replaced by 0 in
    :attr:`x` so kernels can run without NaN checks.
    """

    x: np.ndarray
    u: np.ndarray

    def __post_init__(self):
        x = np.array(self.x, dtype=float, copy=True)
        if x.ndim == 1:
            x = x[:, None]
        if x.ndim != 2:
            raise InputError(f"data must be a 2-d matrix, got shape {x.shape}")
        u = np.asarray(self.u)
        if u.shape != x.shape:
            raise InputError(f"mask shape {u.shape} does not match data shape {x.shape}")
        u = u.astype(bool)
        if not np.all(np.isfinite(x[u])):
            raise InputError("observed cells must be finite")
        x[~u] = 0.0
        x.setflags(write=False)
        u = u.copy()
        u.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "u", u)

    @classmethod
    def from_array(cls, x):
        """Wrap a matrix whose NaN entries mark missing cells."""
        x = np.asarray(x, dtype=float)
        return cls(np.where(np.isfinite(x), x, 0.0), np.isfinite(x))

    @property
    def n(self):
        return self.x.shape[0]

    @property
    def p(self):
        return self.x.shape[1]

    def with_mask(self, mask):
        return Dataset(self.x, np.asarray(mask, dtype=bool) & self.u)

    def to_nan(self):
        out = np.array(self.x, copy=True)
        out[~self.u] = np.nan
        return out

    def subset(self, rows):
        rows = np.asarray(rows)
        return Dataset(self.x[rows], self.u[rows])

    @property
    def missing_fraction(self):
        return 1.0 - self.u.mean()


@dataclass(frozen=True)
class PatternIndex:
    """Rows grouped by missingness pattern.

    Rows with no observed coordinate are excluded from ``order`` and listed in
    ``dropped``.
    """

    patterns: np.ndarray
    order: np.ndarray
    starts: np.ndarray
    dims: np.ndarray
    dropped: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    @classmethod
    def from_mask(cls, u):
        u = np.asarray(u, dtype=bool)
        dims = u.sum(axis=1).astype(np.int64)
        keep = np.nonzero(dims > 0)[0]
        dropped = np.nonzero(dims == 0)[0].astype(np.int64)
        if keep.size == 0:
            patterns = np.zeros((0, u.shape[1]), dtype=bool)
            return cls(patterns, keep.astype(np.int64), np.zeros(1, dtype=np.int64), dims, dropped)
        patterns, inverse = np.unique(u[keep], axis=0, return_inverse=True)
        inverse = inverse.ravel()
        sort = np.argsort(inverse, kind="stable")
        order = keep[sort].astype(np.int64)
        counts = np.bincount(inverse, minlength=patterns.shape[0])
        starts = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
        return cls(np.ascontiguousarray(patterns), order, starts, dims, dropped)

    @property
    def n_patterns(self):
        return self.patterns.shape[0]

    @property
    def retained(self):
        return np.sort(self.order)
