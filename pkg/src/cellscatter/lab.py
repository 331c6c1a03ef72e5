"""Simulation harness: true models, contamination generators, the LRT
divergence and seeded multi-replicate campaigns.

Random streams are derived from ``SeedSequence(seed, spawn_key=(rep, ...))``
so every replicate can run independently of the others.
"""

import csv
import io
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.stats import ortho_group

from .errors import CellScatterError, ConfigError, NumericalError
from .pipeline import parse_pipeline, run_pipeline
from .robust import chi2_quantile

log = logging.getLogger(__name__)

__all__ = [
    "lrt_distance",
    "ar1_correlation",
    "random_correlation",
    "gen_correlation",
    "TrueModel",
    "contaminate_cellwise",
    "contaminate_casewise",
    "ScenarioConfig",
    "CampaignResult",
    "run_campaign",
    "preset",
    "PRESETS",
]

# condition number of random correlations
RANDOM_CORR_CN = 100.0
CN_RTOL = 1e-8
CN_MAX_ITER = 200
FAIL_LIMIT = 0.20
CONTAM_SD = 0.1


def lrt_distance(sigma, sigma0):
    """trace(S S0^-1) - log det(S S0^-1) - p."""
    sigma = np.asarray(sigma, dtype=float)
    sigma0 = np.asarray(sigma0, dtype=float)
    if sigma.shape != sigma0.shape or sigma.ndim != 2 or sigma.shape[0] != sigma.shape[1]:
        raise ValueError("matrices must be square with the same shape")
    try:
        L0 = np.linalg.cholesky(sigma0)
        L = np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError:
        raise ValueError("both matrices must be symmetric positive definite") from None
    A = np.linalg.solve(L0, L)
    tr = float(np.sum(A * A))
    logdet = 2.0 * float(np.sum(np.log(np.diag(L))) - np.sum(np.log(np.diag(L0))))
    return max(tr - logdet - sigma.shape[0], 0.0)


def ar1_correlation(p, rho=0.9):
    idx = np.arange(p)
    return rho ** np.abs(idx[:, None] - idx[None, :]).astype(float)


def random_correlation(p, rng, cond=RANDOM_CORR_CN):
    """Random correlation matrix with condition number ``cond``.

    Eigenvalues 1 and ``cond`` plus p - 2 uniform draws between them, a Haar
    rotation, then alternate between rescaling to unit diagonal and resetting
    the smallest eigenvalue until the condition number is ``cond`` again.
    """
    if p < 2:
        raise ValueError("p must be at least 2")
    if not cond >= 1.0:
        raise ValueError("condition number must be >= 1")
    lam = np.r_[cond, 1.0, rng.uniform(1.0, cond, p - 2)]
    q = ortho_group.rvs(p, random_state=rng)
    a = (q * lam) @ q.T
    for _ in range(CN_MAX_ITER):
        d = np.sqrt(np.diag(a))
        r = a / np.outer(d, d)
        r = 0.5 * (r + r.T)
        w, v = np.linalg.eigh(r)
        if abs(w[-1] / w[0] - cond) <= CN_RTOL * cond:
            break
        w[0] = w[-1] / cond
        a = (v * w) @ v.T
    np.fill_diagonal(r, 1.0)
    return r


def gen_correlation(p, kind="random", seed=0, rho=0.9):
    if p < 2:
        raise ValueError("p must be at least 2")
    if kind == "ar1":
        return ar1_correlation(p, rho)
    if kind == "random":
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        return random_correlation(p, rng)
    raise ValueError(f"unknown correlation kind {kind!r}")


@dataclass(frozen=True)
class TrueModel:
    sigma0: np.ndarray
    mu0: np.ndarray = None
    v: np.ndarray = field(init=False)

    def __post_init__(self):
        s = np.asarray(self.sigma0, dtype=float)
        object.__setattr__(self, "sigma0", s)
        if self.mu0 is None:
            object.__setattr__(self, "mu0", np.zeros(s.shape[0]))
        vals, vecs = np.linalg.eigh(s)
        e = vecs[:, 0]
        e = e if e[np.argmax(np.abs(e))] > 0 else -e
        # v' S0^-1 v = 1
        object.__setattr__(self, "v", math.sqrt(vals[0]) * e)

    @property
    def p(self):
        return self.sigma0.shape[0]

    def sample(self, n, rng):
        L = np.linalg.cholesky(self.sigma0)
        return self.mu0 + rng.standard_normal((n, self.p)) @ L.T


def contaminate_cellwise(x, eps, k, seed):
    """Replace floor(eps n p) random cells by N(k, 0.1^2); returns (x, labels)."""
    if not 0.0 <= eps < 1.0:
        raise ValueError("eps must lie in [0, 1)")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    x = np.array(x, dtype=float, copy=True)
    n, p = x.shape
    count = int(math.floor(eps * n * p + 1e-9))
    labels = np.zeros((n, p), dtype=bool)
    if count:
        cells = rng.choice(n * p, size=count, replace=False)
        labels.flat[cells] = True
        x.flat[cells] = rng.normal(k, CONTAM_SD, size=count)
    return x, labels


def contaminate_casewise(x, model, eps, k, seed):
    """Replace floor(eps n) random rows by 0.5 N(c v, 0.01 I) + 0.5 N(-c v, 0.01 I)
    with c = sqrt(k chi2_p(0.99)); returns (x, row labels)."""
    if not 0.0 <= eps < 1.0:
        raise ValueError("eps must lie in [0, 1)")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    x = np.array(x, dtype=float, copy=True)
    n, p = x.shape
    count = int(math.floor(eps * n + 1e-9))
    labels = np.zeros(n, dtype=bool)
    if count:
        rows = rng.choice(n, size=count, replace=False)
        labels[rows] = True
        c = math.sqrt(k * chi2_quantile(0.99, p))
        signs = np.where(rng.random(count) < 0.5, 1.0, -1.0)
        x[rows] = model.mu0 + signs[:, None] * c * model.v + rng.normal(0.0, CONTAM_SD, (count, p))
    return x, labels


_SCENARIOS = ("none", "cellwise", "casewise")


@dataclass(frozen=True)
class ScenarioConfig:
    p: int = 10
    n: int = 0
    correlation: str = "random"
    rho: float = 0.9
    contamination: str = "cellwise"
    eps: tuple = (0.0, 0.02, 0.05)
    k_grid: tuple = tuple(range(1, 11))
    replicates: int = 50
    seed: int = 0
    estimators: tuple = ("mle", "uf-gse", "ubf-gre-c")
    n_subsamples: int = 0
    threads: int = 1

    def __post_init__(self):
        if int(self.p) < 2:
            raise ConfigError("p: must be at least 2")
        object.__setattr__(self, "n", int(self.n) or 10 * int(self.p))
        if self.n <= 2 * self.p:
            raise ConfigError("n: estimator requires n > 2p")
        if self.correlation not in ("random", "ar1"):
            raise ConfigError("correlation: must be 'random' or 'ar1'")
        if not -1.0 < self.rho < 1.0:
            raise ConfigError("rho: must lie in (-1, 1)")
        if self.contamination not in _SCENARIOS:
            raise ConfigError(f"contamination: must be one of {_SCENARIOS}")
        eps = tuple(float(e) for e in self.eps)
        if not eps or any(not 0.0 <= e < 1.0 for e in eps):
            raise ConfigError("eps: values must lie in [0, 1)")
        if self.contamination == "none":
            eps = (0.0,)
        object.__setattr__(self, "eps", eps)
        ks = tuple(float(k) for k in self.k_grid)
        if not ks:
            raise ConfigError("k_grid: must not be empty")
        object.__setattr__(self, "k_grid", ks)
        if int(self.replicates) < 1:
            raise ConfigError("replicates: must be at least 1")
        ests = tuple(self.estimators)
        for name in ests:
            try:
                parse_pipeline(name)
            except ValueError as exc:
                raise ConfigError(f"estimators: {exc}") from None
        object.__setattr__(self, "estimators", ests)

    @classmethod
    def from_dict(cls, d):
        known = set(cls.__dataclass_fields__)
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"{unknown[0]}: unknown field")
        kw = dict(d)
        for key in ("eps", "k_grid", "estimators"):
            if key in kw:
                if isinstance(kw[key], (str, int, float)):
                    kw[key] = [kw[key]]
                kw[key] = tuple(kw[key])
        if "k_grid" in kw and isinstance(d["k_grid"], dict):
            g = d["k_grid"]
            kw["k_grid"] = tuple(np.arange(g["start"], g["stop"] + 1e-9, g.get("step", 1)).tolist())
        for key, typ in (("p", int), ("n", int), ("replicates", int), ("seed", int),
                         ("n_subsamples", int), ("threads", int), ("rho", float)):
            if key in kw:
                try:
                    kw[key] = typ(kw[key])
                except (TypeError, ValueError):
                    raise ConfigError(f"{key}: expected {typ.__name__}") from None
        return cls(**kw)

    def to_dict(self):
        return {
            "p": self.p, "n": self.n, "correlation": self.correlation, "rho": self.rho,
            "contamination": self.contamination, "eps": list(self.eps),
            "k_grid": list(self.k_grid), "replicates": self.replicates, "seed": self.seed,
            "estimators": list(self.estimators), "n_subsamples": self.n_subsamples,
        }


PRESETS = {
    "table1-p10": dict(p=10, correlation="random", contamination="cellwise",
                       eps=(0.0, 0.02, 0.05), k_grid=tuple(range(1, 11)), replicates=50),
    "table1-p20": dict(p=20, correlation="random", contamination="cellwise",
                       eps=(0.0, 0.02, 0.05), k_grid=tuple(range(1, 11)), replicates=50),
    "table1-ar1-p10": dict(p=10, correlation="ar1", contamination="cellwise",
                           eps=(0.0, 0.02, 0.05), k_grid=tuple(range(1, 11)), replicates=50),
    "table2-p10": dict(p=10, correlation="random", contamination="casewise",
                       eps=(0.0, 0.10, 0.20), k_grid=tuple(range(1, 21)), replicates=50,
                       estimators=("mle", "uf-gse", "uf-gre-c", "ubf-gre-c")),
    "table2-p20": dict(p=20, correlation="random", contamination="casewise",
                       eps=(0.0, 0.10, 0.20), k_grid=tuple(range(1, 21)), replicates=50,
                       estimators=("mle", "uf-gse", "uf-gre-c", "ubf-gre-c")),
    "table3-p10": dict(p=10, correlation="random", contamination="none", replicates=200,
                       estimators=("mle", "uf-gse", "ubf-gre-c", "emve")),
}


def preset(name, **overrides):
    if name not in PRESETS:
        raise ConfigError(f"preset: unknown preset {name!r}; choose from {sorted(PRESETS)}")
    kw = dict(PRESETS[name])
    kw.update({k: v for k, v in overrides.items() if v is not None})
    return ScenarioConfig(**kw)


@dataclass
class CampaignResult:
    config: ScenarioConfig
    # (estimator, eps, k) -> per-replicate LRT, NaN for failures
    lrt: dict
    seconds: float = 0.0

    def rows(self):
        """Long-format rows, one per (estimator, eps, k)."""
        out = []
        for est in self.config.estimators:
            for eps in self.config.eps:
                for k in self.config.k_grid:
                    vals = self.lrt[(est, eps, 0.0 if eps == 0.0 else k)]
                    ok = vals[np.isfinite(vals)]
                    mean = float(ok.mean()) if ok.size else math.nan
                    se = float(ok.std(ddof=1) / math.sqrt(ok.size)) if ok.size > 1 else math.nan
                    out.append({
                        "estimator": est, "scenario": self.config.contamination,
                        "eps": eps, "k": k, "mean_lrt": mean, "se": se,
                        "n_ok": int(ok.size), "n_failed": int(vals.size - ok.size),
                    })
        return out

    def mean(self, est, eps, k=None):
        key = (est, eps, 0.0 if eps == 0.0 else k)
        vals = self.lrt[key]
        return float(np.nanmean(vals))

    def max_over_k(self, est, eps):
        """(max average LRT over the k grid, its k)."""
        if eps == 0.0:
            return self.mean(est, 0.0), None
        best = (-math.inf, None)
        for k in self.config.k_grid:
            m = self.mean(est, eps, k)
            if m > best[0]:
                best = (m, k)
        return best

    def efficiency(self, est, baseline="mle"):
        if 0.0 not in self.config.eps:
            return math.nan
        return self.mean(baseline, 0.0) / self.mean(est, 0.0)

    def summary(self):
        ests = {}
        for est in self.config.estimators:
            entry = {"max_mean_lrt": {}, "argmax_k": {}}
            for eps in self.config.eps:
                m, k = self.max_over_k(est, eps)
                entry["max_mean_lrt"][repr(eps)] = m
                entry["argmax_k"][repr(eps)] = k
            if "mle" in self.config.estimators and 0.0 in self.config.eps:
                entry["efficiency"] = self.efficiency(est)
            ests[est] = entry
        return {"config": self.config.to_dict(), "estimators": ests}


def _stream(seed, *key):
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(key)))


def _replicate(cfg, rep):
    """LRTs of every (estimator, eps, k) cell for one replicate."""
    if cfg.correlation == "ar1":
        sigma0 = ar1_correlation(cfg.p, cfg.rho)
    else:
        sigma0 = random_correlation(cfg.p, _stream(cfg.seed, rep, 0))
    model = TrueModel(sigma0)
    clean = model.sample(cfg.n, _stream(cfg.seed, rep, 1))
    pipe_seed = int(np.random.SeedSequence(cfg.seed, spawn_key=(rep, 3)).generate_state(1)[0])
    specs = {name: parse_pipeline(name, seed=pipe_seed, n_subsamples=cfg.n_subsamples)
             for name in cfg.estimators}
    out = {}
    for ei, eps in enumerate(cfg.eps):
        ks = [0.0] if eps == 0.0 else list(cfg.k_grid)
        for ki, k in enumerate(ks):
            rng = _stream(cfg.seed, rep, 2, ei, ki)
            if eps == 0.0:
                x = clean
            elif cfg.contamination == "cellwise":
                x, _ = contaminate_cellwise(clean, eps, k, rng)
            else:
                x, _ = contaminate_casewise(clean, model, eps, k, rng)
            for name, spec in specs.items():
                try:
                    est = run_pipeline(x, spec).estimate
                    val = lrt_distance(est.sigma, sigma0)
                except (CellScatterError, ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
                    log.debug("replicate %d %s eps=%g k=%g failed: %s", rep, name, eps, k, exc)
                    val = math.nan
                out[(name, eps, k)] = val
    return out


def run_campaign(cfg, progress=None):
    """Run all replicates of ``cfg``; raises if more than 20% of the
    replicates of any (estimator, eps, k) cell failed."""
    t0 = time.perf_counter()
    reps = range(cfg.replicates)

    def one(rep):
        res = _replicate(cfg, rep)
        if progress is not None:
            progress(rep)
        return res

    if cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as ex:
            per_rep = list(ex.map(one, reps))
    else:
        per_rep = [one(r) for r in reps]
    keys = per_rep[0].keys()
    lrt = {key: np.array([r[key] for r in per_rep]) for key in keys}
    for key, vals in lrt.items():
        failed = np.count_nonzero(~np.isfinite(vals))
        if failed > FAIL_LIMIT * vals.size:
            raise NumericalError(
                f"campaign failed: {failed}/{vals.size} replicates of {key[0]} "
                f"at eps={key[1]}, k={key[2]} did not produce an estimate"
            )
    return CampaignResult(cfg, lrt, time.perf_counter() - t0)


def with_overrides(cfg, **kw):
    return replace(cfg, **{k: v for k, v in kw.items() if v is not None})


CSV_FIELDS = ("estimator", "scenario", "eps", "k", "mean_lrt", "se", "n_ok", "n_failed")


def campaign_csv(result):
    from .io import format_number

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_FIELDS)
    for row in result.rows():
        w.writerow([row[f] if isinstance(row[f], str) else format_number(row[f]) for f in CSV_FIELDS])
    return buf.getvalue()
