import math

import numpy as np
import pytest
from scipy import stats

from cellscatter.errors import ConfigError, NumericalError
from cellscatter.lab import (
    CSV_FIELDS,
    PRESETS,
    ScenarioConfig,
    TrueModel,
    ar1_correlation,
    campaign_csv,
    contaminate_casewise,
    contaminate_cellwise,
    gen_correlation,
    lrt_distance,
    preset,
    random_correlation,
    run_campaign,
)


def test_lrt_examples():
    s0 = random_correlation(5, np.random.default_rng(0))
    assert lrt_distance(s0, s0) == pytest.approx(0.0, abs=1e-12)
    assert lrt_distance([[2.0]], [[1.0]]) == pytest.approx(1.0 - math.log(2.0))
    s4 = random_correlation(4, np.random.default_rng(1))
    assert lrt_distance(3.0 * s4, s4) == pytest.approx(4 * (3.0 - math.log(3.0) - 1.0))


def test_lrt_direct_formula_and_positivity():
    r = np.random.default_rng(2)
    s0 = random_correlation(6, r)
    a = r.standard_normal((6, 6))
    s = a @ a.T + np.eye(6)
    m = s @ np.linalg.inv(s0)
    assert lrt_distance(s, s0) == pytest.approx(np.trace(m) - np.linalg.slogdet(m)[1] - 6, rel=1e-10)
    for eps in (1e-3, 1e-1):
        assert lrt_distance(s0 + eps * np.eye(6), s0) > 0.0


def test_lrt_rejects_non_spd():
    with pytest.raises(ValueError):
        lrt_distance(np.diag([1.0, -1.0]), np.eye(2))


def test_ar1():
    np.testing.assert_allclose(ar1_correlation(3), [[1, .9, .81], [.9, 1, .9], [.81, .9, 1]])
    np.testing.assert_array_equal(ar1_correlation(5, 0.0), np.eye(5))
    np.linalg.cholesky(ar1_correlation(100))


def test_random_correlation_regime():
    r = np.random.default_rng(3)
    maxes = []
    for _ in range(200):
        c = random_correlation(10, r)
        np.testing.assert_allclose(np.diag(c), 1.0)
        assert np.all(np.linalg.eigvalsh(c) > 0)
        maxes.append(np.abs(c - np.eye(10)).max())
    assert np.mean(maxes) == pytest.approx(0.49, abs=0.1)


def test_gen_correlation_dispatch():
    np.testing.assert_array_equal(gen_correlation(4, "ar1"), ar1_correlation(4))
    np.testing.assert_array_equal(gen_correlation(4, "random", 7), gen_correlation(4, "random", 7))
    with pytest.raises(ValueError):
        gen_correlation(4, "toeplitz")


def test_cellwise():
    x = np.random.default_rng(4).standard_normal((100, 10))
    same, lab = contaminate_cellwise(x, 0.0, 5.0, 1)
    np.testing.assert_array_equal(same, x)
    assert not lab.any()
    y, lab = contaminate_cellwise(x, 0.05, 5.0, 1)
    assert lab.sum() == 50
    np.testing.assert_array_equal(y[~lab], x[~lab])
    big = np.zeros((1000, 20))
    y, lab = contaminate_cellwise(big, 0.5, 3.0, 2)
    assert y[lab].mean() == pytest.approx(3.0, abs=0.05)


def test_true_model_and_casewise():
    s0 = random_correlation(8, np.random.default_rng(5))
    m = TrueModel(s0)
    assert m.v @ np.linalg.solve(s0, m.v) == pytest.approx(1.0, abs=1e-10)
    x = m.sample(100, np.random.default_rng(6))
    y, lab = contaminate_casewise(x, m, 0.1, 4.0, 7)
    assert lab.sum() == 10
    np.testing.assert_array_equal(y[~lab], x[~lab])
    # shift c v plus N(0, 0.01 I) noise: mean squared distance c^2 + 0.01 tr(S^-1)
    big = m.sample(4000, np.random.default_rng(8))
    y, lab = contaminate_casewise(big, m, 0.5, 4.0, 9)
    c2 = 4.0 * stats.chi2.ppf(0.99, 8)
    inv = np.linalg.inv(s0)
    d = np.einsum("ij,jk,ik->i", y[lab], inv, y[lab])
    sd = np.sqrt(0.04 * c2 * (m.v @ inv @ inv @ m.v) / lab.sum())
    assert d.mean() == pytest.approx(c2 + 0.01 * np.trace(inv), abs=4 * sd)


def test_config_validation():
    with pytest.raises(ConfigError, match="^n:"):
        ScenarioConfig(p=10, n=15)
    with pytest.raises(ConfigError, match="^estimators:"):
        ScenarioConfig(estimators=("nope",))
    with pytest.raises(ConfigError, match="^bogus:"):
        ScenarioConfig.from_dict({"bogus": 1})
    cfg = ScenarioConfig.from_dict({"p": 3, "k_grid": {"start": 1, "stop": 3}, "eps": 0.1})
    assert cfg.n == 30 and cfg.k_grid == (1.0, 2.0, 3.0) and cfg.eps == (0.1,)
    assert ScenarioConfig.from_dict(cfg.to_dict()) == cfg
    assert set(PRESETS) >= {"table1-p10", "table2-p20", "table3-p10"}
    with pytest.raises(ConfigError):
        preset("table9")


def _small(**kw):
    base = dict(p=3, n=40, correlation="ar1", contamination="cellwise", eps=(0.0, 0.1),
                k_grid=(2.0, 6.0), replicates=3, seed=5, estimators=("mle", "uf-gse"),
                n_subsamples=20)
    base.update(kw)
    return ScenarioConfig(**base)


def test_campaign_determinism_and_layout():
    a = run_campaign(_small())
    b = run_campaign(_small(threads=3))
    assert campaign_csv(a) == campaign_csv(b)
    lines = campaign_csv(a).splitlines()
    assert lines[0] == ",".join(CSV_FIELDS)
    assert len(lines) == 1 + 2 * 2 * 2
    assert a.max_over_k("mle", 0.0) == (a.mean("mle", 0.0), None)
    m, k = a.max_over_k("mle", 0.1)
    assert m == max(a.mean("mle", 0.1, kk) for kk in (2.0, 6.0))
    assert a.efficiency("mle") == 1.0
    summ = a.summary()
    assert set(summ["estimators"]) == {"mle", "uf-gse"}


def test_campaign_failure_limit(monkeypatch):
    from cellscatter import lab

    def broken(x, spec):
        raise NumericalError("boom")

    monkeypatch.setattr(lab, "run_pipeline", broken)
    with pytest.raises(NumericalError, match="campaign failed"):
        run_campaign(_small(replicates=2))
