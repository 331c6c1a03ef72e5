import itertools
import math

import numpy as np
import pytest
from scipy import stats

from cellscatter.errors import DegenerateError
from cellscatter.robust import (
    MAD_CONSTANT,
    QN_CONSTANT,
    binom_quantile,
    chi2_2_cdf,
    chi2_cdf,
    chi2_pdf,
    chi2_quantile,
    gk_cov,
    half_normal_cdf,
    mad,
    median,
    qn,
    check_dispersion,
)


def test_median_small_cases():
    assert median([3.0]) == 3.0
    assert median([4.0, 1.0]) == 2.5
    assert median([5, 1, 3]) == 3.0


def test_mad_raw_and_normalized():
    x = [1, 2, 3, 4, 100]
    assert mad(x, normalized=False) == 1.0
    assert mad(x) == pytest.approx(MAD_CONSTANT)


def test_mad_matches_scipy(rng):
    x = rng.standard_normal(301)
    assert mad(x) == pytest.approx(stats.median_abs_deviation(x, scale=1 / MAD_CONSTANT))


def test_empty_and_nan_inputs_rejected():
    with pytest.raises(ValueError, match="empty sample"):
        median([])
    with pytest.raises(ValueError):
        mad([1.0])
    with pytest.raises(ValueError):
        qn([1.0, np.nan, 2.0])


def _qn_brute(x):
    n = len(x)
    h = n // 2 + 1
    k = h * (h - 1) // 2
    diffs = sorted(abs(a - b) for a, b in itertools.combinations(x, 2))
    return QN_CONSTANT * diffs[k - 1]


@pytest.mark.parametrize("n", [2, 3, 4, 7, 10, 31])
def test_qn_against_pairwise_enumeration(n, rng):
    x = rng.standard_normal(n)
    assert qn(x) == pytest.approx(_qn_brute(x), rel=1e-12)


def test_qn_two_points():
    assert qn([1.0, 2.0]) == pytest.approx(2.2219)


def test_gk_cov_symmetric_and_scale():
    r = np.random.default_rng(3)
    x = r.standard_normal(200)
    y = 0.5 * x + r.standard_normal(200)
    assert gk_cov(x, y) == pytest.approx(gk_cov(y, x))
    assert gk_cov(x, x) == pytest.approx(mad(x) ** 2)
    # common scaling only; GK is not bilinear
    assert gk_cov(2 * x, 2 * y, scale="qn") == pytest.approx(4 * gk_cov(x, y, scale="qn"))


def test_gk_cov_length_mismatch():
    with pytest.raises(ValueError, match="length mismatch"):
        gk_cov([1, 2, 3], [1, 2])
    with pytest.raises(ValueError):
        gk_cov([1, 2, 3], [1, 2, 3], scale="iqr")


@pytest.mark.parametrize("k", [1, 2, 3, 7, 20, 100])
def test_chi2_cdf_pdf_against_scipy(k):
    for t in [1e-4, 0.3, 1.0, k * 0.8, k, 2.5 * k + 3]:
        assert chi2_cdf(t, k) == pytest.approx(stats.chi2.cdf(t, k), rel=1e-11, abs=1e-15)
        assert chi2_pdf(t, k) == pytest.approx(stats.chi2.pdf(t, k), rel=1e-11)
    assert chi2_cdf(0.0, k) == 0.0
    assert chi2_cdf(math.inf, k) == 1.0


@pytest.mark.parametrize("k", [1, 2, 5, 10, 40])
@pytest.mark.parametrize("prob", [0.01, 0.25, 0.5, 0.85, 0.95, 0.975, 0.99])
def test_chi2_quantile_round_trip(k, prob):
    q = chi2_quantile(prob, k)
    assert q == pytest.approx(stats.chi2.ppf(prob, k), rel=1e-10)
    assert chi2_cdf(q, k) == pytest.approx(prob, abs=1e-10)


def test_chi2_quantile_grid_round_trip():
    # includes upper-tail points where a Newton step overshoots the bracket
    for k in range(1, 61):
        for t in np.geomspace(0.01, 100.0, 200):
            c = chi2_cdf(t, k)
            if 0.0 < c and 1.0 - c > 1e-7:
                assert chi2_quantile(c, k) == pytest.approx(t, rel=1e-8)


def test_chi2_quantile_known_values():
    assert chi2_quantile(0.95, 1) == pytest.approx(3.841459, abs=1e-6)
    assert chi2_quantile(0.85, 2) == pytest.approx(-2 * math.log(0.15), rel=1e-12)
    assert chi2_quantile(0.95, 40) == pytest.approx(55.758, abs=1e-3)


@pytest.mark.parametrize("bad", [0.0, 1.0, -0.1, 1.5])
def test_chi2_quantile_domain(bad):
    with pytest.raises(ValueError):
        chi2_quantile(bad, 3)
    with pytest.raises(ValueError):
        chi2_cdf(1.0, 0)


@pytest.mark.parametrize("n", [0, 1, 5, 10, 37, 120])
@pytest.mark.parametrize("prob,level", [(0.1, 0.99), (0.3, 0.5), (0.05, 0.95)])
def test_binom_quantile_against_scipy(n, prob, level):
    c = binom_quantile(n, prob, level)
    assert c == int(stats.binom.ppf(level, n, prob))
    assert stats.binom.cdf(c, n, prob) >= level - 1e-12
    if c > 0:
        assert stats.binom.cdf(c - 1, n, prob) < level


def test_binom_quantile_small_example():
    assert binom_quantile(10, 0.1, 0.99) == 4
    assert binom_quantile(0, 0.1, 0.99) == 0
    with pytest.raises(ValueError):
        binom_quantile(-1, 0.1, 0.9)


def test_vectorized_reference_cdfs():
    t = np.array([-1.0, 0.0, 0.5, 2.0])
    np.testing.assert_allclose(half_normal_cdf(t), np.where(t > 0, 2 * stats.norm.cdf(t) - 1, 0))
    np.testing.assert_allclose(chi2_2_cdf(t), stats.chi2.cdf(t, 2))


def test_check_dispersion():
    assert check_dispersion(0.5) == 0.5
    with pytest.raises(DegenerateError):
        check_dispersion(0.0, "column")
