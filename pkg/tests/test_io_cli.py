import json
import math
import time

import numpy as np
import pytest

from cellscatter import cli
from cellscatter.data import Dataset
from cellscatter.errors import ConfigError, InputError
from cellscatter.io import dumps_json, format_number, load_config, read_csv
from cellscatter.lab import ar1_correlation
from cellscatter.pipeline import parse_pipeline, run_pipeline

from conftest import gaussian


def _write(path, x, header=None, na="NA"):
    lines = [",".join(header)] if header else []
    for row in x:
        lines.append(",".join(na if np.isnan(v) else repr(float(v)) for v in row))
    path.write_text("\n".join(lines) + "\n")
    return path


def test_format_number():
    assert format_number(0.1) == "0.10000000000000001"
    assert float(format_number(math.pi)) == math.pi
    assert format_number(3) == "3"
    assert format_number(float("nan")) == "NaN"
    assert format_number(-math.inf) == "-Infinity"
    assert format_number(True) == "true"


def test_json_round_trip():
    r = np.random.default_rng(0)
    doc = {"a": r.standard_normal(3), "m": r.standard_normal((2, 2)), "s": "x", "n": None, "z": np.nan}
    back = json.loads(dumps_json(doc))
    np.testing.assert_array_equal(back["a"], doc["a"])
    np.testing.assert_array_equal(back["m"], doc["m"])
    assert back["n"] is None and math.isnan(back["z"])


def test_read_csv(tmp_path):
    p = tmp_path / "a.csv"
    p.write_text("a,b\n1,NA\n,2.5\n3,4\n")
    x, header = read_csv(p)
    assert header == ["a", "b"]
    assert np.isnan(x[0, 1]) and np.isnan(x[1, 0]) and x[2, 1] == 4.0
    p.write_text("1,?\n2,3\n")
    x, header = read_csv(p, na_token="?")
    assert header is None and np.isnan(x[0, 1])
    p.write_text("1,2\n3,abc\n")
    with pytest.raises(InputError, match="row 2, column 2"):
        read_csv(p)
    p.write_text("1,2\n3\n")
    with pytest.raises(InputError):
        read_csv(p)
    with pytest.raises(InputError):
        read_csv(tmp_path / "missing.csv")


def test_load_config(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("p: 5\neps: [0.1]\n")
    assert load_config(p) == {"p": 5, "eps": [0.1]}
    p.write_text("- 1\n- 2\n")
    with pytest.raises(ConfigError):
        load_config(p)


def test_parse_pipeline_names():
    assert parse_pipeline("ubf-gre-c").name == "ubf-gre-c"
    assert parse_pipeline("uf-gse").init == "emve"
    assert parse_pipeline("mle").filter == "none"
    assert parse_pipeline("emve-c").estimator == "emve"
    for bad in ("gse-x", "ubf", "foo-gre"):
        with pytest.raises(ValueError):
            parse_pipeline(bad)


def test_external_mask_intersection():
    x = gaussian(80, 3, seed=1)
    x[0, 0] = 50.0
    data = Dataset.from_array(x)
    keep_all = np.ones((80, 3), dtype=bool)
    res = run_pipeline(data, parse_pipeline("ubf-gre-c"), external_mask=keep_all)
    assert res.mask.all()
    ext = keep_all.copy()
    ext[0, 0] = False
    res = run_pipeline(data, parse_pipeline("ubf-gre-c"), external_mask=ext)
    assert not res.mask[0, 0]


@pytest.fixture
def clean_csv(tmp_path):
    x = gaussian(100, 10, seed=2, sigma=ar1_correlation(10, 0.5))
    return _write(tmp_path / "clean.csv", x, header=[f"x{j}" for j in range(10)])


def test_estimate_clean(clean_csv, tmp_path):
    out = tmp_path / "out"
    assert cli.main(["estimate", str(clean_csv), "--output-dir", str(out), "--seed", "3"]) == 0
    doc = json.loads((out / "estimate.json").read_text())
    sigma = np.array(doc["sigma"])
    np.testing.assert_array_equal(sigma, sigma.T)
    assert doc["converged"] and doc["columns"][0] == "x0"
    cases = np.loadtxt(out / "cases.csv", delimiter=",", skiprows=1)
    assert cases.shape == (100, 4)
    assert np.all(cases[:, 1] >= 0)
    assert np.median(cases[:, 2]) > 0.5
    assert doc["flagged_cells"] / 1000 < 0.05
    assert (out / "flags.csv").read_text().startswith("row,column,name,source,m,c")
    assert json.loads((out / "timing.json").read_text())["seconds"] > 0


def test_estimate_json_matches_memory(clean_csv, tmp_path):
    out = tmp_path / "o"
    cli.main(["estimate", str(clean_csv), "--output-dir", str(out), "--filter", "uf",
              "--estimator", "gse", "--init", "emve", "--subsamples", "50"])
    doc = json.loads((out / "estimate.json").read_text())
    x, _ = read_csv(clean_csv)
    spec = parse_pipeline("uf-gse", n_subsamples=50)
    est = run_pipeline(Dataset.from_array(x), spec).estimate
    np.testing.assert_array_equal(np.array(doc["mu"]), est.mu)
    np.testing.assert_array_equal(np.array(doc["sigma"]), 0.5 * (est.sigma + est.sigma.T))


def test_estimate_absurd_row(tmp_path):
    x = gaussian(100, 5, seed=4)
    x[10] = 1e6
    f = _write(tmp_path / "a.csv", x)
    out = tmp_path / "o"
    assert cli.main(["estimate", str(f), "--output-dir", str(out), "--filter", "none"]) == 0
    cases = np.loadtxt(out / "cases.csv", delimiter=",", skiprows=1)
    assert cases[10, 2] == 0.0


def test_estimate_exit_codes(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("1,2\n3,x\n")
    assert cli.main(["estimate", str(bad)]) == 2
    assert "row 2, column 2" in capsys.readouterr().err
    small = _write(tmp_path / "s.csv", gaussian(8, 4))
    assert cli.main(["estimate", str(small)]) == 2
    assert "n > 2p" in capsys.readouterr().err
    ok = _write(tmp_path / "ok.csv", gaussian(60, 3))
    assert cli.main(["estimate", str(ok), "--alpha-uni", "1.5", "--output-dir", str(tmp_path)]) == 4
    flat = np.c_[np.ones(60), gaussian(60, 2)]
    f = _write(tmp_path / "flat.csv", flat)
    assert cli.main(["estimate", str(f), "--output-dir", str(tmp_path)]) == 3


def test_estimate_warns_small_n(tmp_path, caplog):
    f = _write(tmp_path / "w.csv", gaussian(12, 4, seed=5))
    cli.main(["estimate", str(f), "--output-dir", str(tmp_path), "--filter", "none", "--init", "emve"])
    assert "below 5p" in caplog.text


def test_filter_command(tmp_path):
    r = np.random.default_rng(6)
    x = r.multivariate_normal(np.zeros(8), ar1_correlation(8), size=200)
    planted = r.random(x.shape) < 0.05
    x[planted] = 5.0 + r.normal(0, 0.1, planted.sum())
    f = _write(tmp_path / "f.csv", x)
    out = tmp_path / "o"
    assert cli.main(["filter", str(f), "--output-dir", str(out)]) == 0
    rows = np.loadtxt(out / "flags.csv", delimiter=",", skiprows=1, usecols=(0, 1), dtype=int, ndmin=2)
    flagged = np.zeros_like(planted)
    flagged[rows[:, 0] - 1, rows[:, 1] - 1] = True
    assert (flagged & planted).sum() / planted.sum() >= 0.9
    one = _write(tmp_path / "one.csv", gaussian(50, 1, seed=7))
    assert cli.main(["filter", str(one), "--filter", "uf", "--output-dir", str(out)]) == 0


def test_filter_clean_near_empty(clean_csv, tmp_path):
    cli.main(["filter", str(clean_csv), "--output-dir", str(tmp_path)])
    n_flags = len((tmp_path / "flags.csv").read_text().splitlines()) - 1
    assert n_flags / 1000 < 0.05


def test_simulate_preset_smoke(tmp_path):
    out = tmp_path / "s"
    t0 = time.perf_counter()
    assert cli.main(["simulate", "--preset", "table1-p10", "--replicates", "1",
                     "--output-dir", str(out)]) == 0
    assert time.perf_counter() - t0 < 60
    lines = (out / "campaign.csv").read_text().splitlines()
    assert len(lines) == 1 + 3 * 3 * 10
    eps = {line.split(",")[2] for line in lines[1:]}
    assert eps == {"0", "0.02", "0.050000000000000003"}
    assert "estimators" in json.loads((out / "summary.json").read_text())


def test_simulate_config_errors(tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("p: 3\nbogus: 1\n")
    assert cli.main(["simulate", str(cfg), "--output-dir", str(tmp_path)]) == 4
    cfg.write_text("p: 3\nn: 4\n")
    assert cli.main(["simulate", str(cfg), "--output-dir", str(tmp_path)]) == 4


def test_threads_env(monkeypatch):
    monkeypatch.setenv(cli.THREADS_ENV, "3")
    assert cli._default_threads() == 3
    monkeypatch.setenv(cli.THREADS_ENV, "many")
    with pytest.raises(ConfigError):
        cli._default_threads()
