import numpy as np
import pytest

from cellscatter.data import Dataset


@pytest.fixture
def rng():
    return np.random.default_rng(20240917)


def gaussian(n, p, seed=0, sigma=None):
    r = np.random.default_rng(seed)
    if sigma is None:
        return r.standard_normal((n, p))
    return r.multivariate_normal(np.zeros(p), sigma, size=n)


def with_holes(x, frac, seed=0):
    """Copy of x with a random fraction of cells set to NaN (no empty rows)."""
    r = np.random.default_rng(seed)
    x = np.array(x, dtype=float, copy=True)
    holes = r.random(x.shape) < frac
    holes[holes.all(axis=1), 0] = False
    x[holes] = np.nan
    return x


def dataset(x):
    return Dataset.from_array(x)
