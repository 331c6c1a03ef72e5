"""Initial estimators: Gaussian EM for incomplete data and the extended
minimum volume ellipsoid (EMVE) by subsampling.

Each EMVE candidate is an EM fit on a small subsample.  Candidates are scored
by a median-calibrated scale of the partial distances of the whole sample
under the unit-determinant candidate scatter; the smallest score wins.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .data import Dataset, PatternIndex
from .errors import DegenerateError, NumericalError
from .robust import chi2_quantile
from .sest import ScatterEstimate

log = logging.getLogger(__name__)

__all__ = [
    "required_subsamples",
    "gaussian_em",
    "observed_loglik",
    "SubsamplingPlan",
    "emve",
]

LOG_2PI = math.log(2.0 * math.pi)
MAX_ATTEMPTS = 10
# EM inside a candidate only needs a rough fit
CANDIDATE_EM_ITER = 10
CANDIDATE_EM_TOL = 1e-4


def required_subsamples(q, eps, n, m):
    """Number of size-m subsamples needed to draw a clean one with probability q.

    With P = C(n(1 - eps), m) / C(n, m) the probability that one subsample is
    clean, M* = log(1 - q) / log(1 - P).  M* is rounded to the nearest integer
    (never below 1).
    """
    if not 0.0 < q < 1.0:
        raise ValueError("q must lie in (0, 1)")
    if not 0.0 <= eps < 1.0:
        raise ValueError("eps must lie in [0, 1)")
    n, m = int(n), int(m)
    if m < 1 or m > n:
        raise ValueError("need 1 <= m <= n")
    clean = int(math.floor(n * (1.0 - eps) + 1e-9))
    if m > clean:
        raise ValueError(f"no clean subsample of size {m} exists among {clean} clean cases")
    # log of C(clean, m) / C(n, m)
    log_p = sum(math.log(clean - i) - math.log(n - i) for i in range(m))
    if log_p == 0.0:
        return 1
    m_star = math.log1p(-q) / math.log1p(-math.exp(log_p))
    return max(1, int(math.floor(m_star + 0.5)))


def observed_loglik(data, mu, sigma, index=None):
    """Gaussian log-likelihood of the observed coordinates."""
    index = index or PatternIndex.from_mask(data.u)
    d, ld = _kernels.partial_mahalanobis(
        data.x, index.patterns, index.order, index.starts,
        np.ascontiguousarray(mu, dtype=float), np.ascontiguousarray(sigma, dtype=float),
    )
    rows = index.order
    return -0.5 * float(np.sum(d[rows] + ld[rows] + index.dims[rows] * LOG_2PI))


def _em_check(u):
    counts = u.sum(axis=0)
    if np.any(counts < 2):
        raise DegenerateError("every coordinate must be observed at least twice")
    uu = u.astype(float)
    if np.any(uu.T @ uu == 0.0):
        raise DegenerateError("some coordinate pair is never jointly observed")


def _well_conditioned(sigma):
    ev = np.linalg.eigvalsh(sigma)
    return ev[0] > 0.0 and ev[-1] / ev[0] < 1e12


def _checked(sigma, p):
    if _well_conditioned(sigma):
        return sigma
    sigma = sigma + 1e-8 * np.trace(sigma) / p * np.eye(p)
    if not _well_conditioned(sigma):
        raise NumericalError("singular scatter in EM")
    return sigma


def gaussian_em(data, max_iter=500, tol=1e-10, mu=None, sigma=None, return_info=False,
                check_every=True):
    """Normal-theory maximum likelihood (mu, sigma) with cells missing at random.

    Starts from the available-case means and variances.  Stops when the
    largest parameter change, in units of the coordinate standard
    deviations, falls below ``tol``.  A scatter that turns singular gets one ridge bump of
    1e-8 * trace / p; persisting singularity raises.  With ``check_every``
    off the check runs only on the returned scatter.
    """
    if not isinstance(data, Dataset):
        data = Dataset.from_array(data)
    x, u = data.x, data.u
    n, p = x.shape
    _em_check(u)
    index = PatternIndex.from_mask(u)
    if mu is None:
        cnt = u.sum(axis=0)
        mu = (x * u).sum(axis=0) / cnt
        dev = np.where(u, x - mu, 0.0)
        var = (dev * dev).sum(axis=0) / cnt
        if np.any(var <= 0.0):
            raise DegenerateError("a coordinate has zero variance")
        sigma = np.diag(var)
    mu = np.array(mu, dtype=float)
    sigma = np.array(sigma, dtype=float)
    nrow = index.order.size
    w = np.zeros(n)
    w[index.order] = 1.0
    trace = [observed_loglik(data, mu, sigma, index)] if return_info else None
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        try:
            sw, sy, syy = _kernels.estep_moments(
                x, index.patterns, index.order, index.starts, mu, sigma, w,
            )
        except np.linalg.LinAlgError as exc:
            raise NumericalError("singular scatter in EM") from exc
        delta = sy / nrow
        new_mu = mu + delta
        new_sigma = syy / nrow - np.outer(delta, delta)
        new_sigma = 0.5 * (new_sigma + new_sigma.T)
        if check_every or it == max_iter:
            new_sigma = _checked(new_sigma, p)
        change = _kernels.scaled_change(new_mu - mu, new_sigma - sigma, new_sigma)
        mu, sigma = new_mu, new_sigma
        if return_info:
            trace.append(observed_loglik(data, mu, sigma, index))
        if change <= tol:
            converged = True
            if not check_every:
                sigma = _checked(sigma, p)
            break
    if return_info:
        return mu, sigma, {"iterations": it, "converged": converged, "loglik": trace}
    return mu, sigma


@dataclass(frozen=True)
class SubsamplingPlan:
    mode: str = "uniform"
    n_subsamples: int = 0
    subsample_size: int = 0
    alpha_mis: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("uniform", "cluster"):
            raise ValueError(f"mode must be 'uniform' or 'cluster', got {self.mode!r}")
        if not 0.0 <= self.alpha_mis < 1.0:
            raise ValueError("alpha_mis must lie in [0, 1)")
        if self.n_subsamples < 0 or self.subsample_size < 0:
            raise ValueError("subsample counts must be nonnegative")

    @classmethod
    def default(cls, mode, p, alpha_mis=0.0, seed=0, n_subsamples=None, subsample_size=None):
        """Defaults: 500 subsamples of ceil((p+1)/(1-a)) cases, or 50 of twice that for cluster mode."""
        if mode == "cluster":
            m = 50 if n_subsamples is None else n_subsamples
            n0 = math.ceil(2 * (p + 1) / (1.0 - alpha_mis) - 1e-9)
        else:
            m = 500 if n_subsamples is None else n_subsamples
            n0 = math.ceil((p + 1) / (1.0 - alpha_mis) - 1e-9)
        if subsample_size is not None:
            n0 = subsample_size
        return cls(mode, int(m), int(n0), float(alpha_mis), int(seed))

    def resolved(self, data):
        """Fill zero defaults from the data and check n0 against n."""
        p = data.p
        alpha = self.alpha_mis if self.alpha_mis > 0.0 else data.missing_fraction
        alpha = min(alpha, 0.9)
        plan = SubsamplingPlan.default(
            self.mode, p, alpha, self.seed,
            n_subsamples=self.n_subsamples or None,
            subsample_size=self.subsample_size or None,
        )
        if plan.n_subsamples < 1:
            raise ValueError("need at least one subsample")
        if plan.subsample_size > data.n:
            raise ValueError(f"subsample size {plan.subsample_size} exceeds n = {data.n}")
        return plan


def _candidate(data, pool, n0, seed, j, calib, index):
    """EM fit on a random subsample; returns (score, mu, sigma*, rows) or None."""
    for attempt in range(MAX_ATTEMPTS):
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(j, attempt)))
        rows = np.sort(rng.choice(pool, size=n0, replace=False))
        mu, sigma, _, status = _kernels.em_subsample(
            data.x, data.u, rows, CANDIDATE_EM_ITER, CANDIDATE_EM_TOL,
        )
        if status != _kernels.EM_OK:
            continue
        sigma = 0.5 * (sigma + sigma.T)
        if not _well_conditioned(sigma):
            continue
        _, logdet = np.linalg.slogdet(sigma)
        unit = sigma * math.exp(-logdet / data.p)
        try:
            d, _ = _kernels.partial_mahalanobis(
                data.x, index.patterns, index.order, index.starts, mu, unit,
            )
        except np.linalg.LinAlgError:
            continue
        keep = index.order
        score = float(np.median(d[keep] / calib[keep]))
        if not (math.isfinite(score) and score > 0.0):
            continue
        return score, mu, unit, rows
    return None


def _reweight(data, mu, sigma, d, cut, calib, index):
    # EM on the cases inside the cutoff, then median recalibration
    rows = index.order
    inside = rows[d[rows] <= cut[index.dims[rows] - 1]]
    try:
        mu_r, sigma_r = gaussian_em(data.subset(np.sort(inside)), max_iter=100, tol=1e-6)
        d_r, _ = _kernels.partial_mahalanobis(
            data.x, index.patterns, index.order, index.starts, mu_r, sigma_r,
        )
    except (NumericalError, np.linalg.LinAlgError):
        log.debug("EMVE reweighting step failed; keeping the raw estimate")
        return mu, sigma, d
    s = float(np.median(d_r[rows] / calib[rows]))
    if not (math.isfinite(s) and s > 0.0):
        return mu, sigma, d
    return mu_r, sigma_r * s, d_r / s


def emve(data, plan=None, threads=1, pool=None, reweight=True):
    """Extended MVE by subsampling.

    ``pool`` restricts the cases subsamples are drawn from (the clean
    cluster for EMVE-C); by default every case with an observed value.
    Returns a :class:`ScatterEstimate` whose sigma is the winning unit-volume
    scatter times its calibrated scale; weights are the indicator of a
    partial distance below the 0.975 chi-square quantile.

    With ``reweight`` the winner is refined once: EM on the cases with
    weight 1, rescaled so the median calibrated distance is 1.
    """
    if not isinstance(data, Dataset):
        data = Dataset.from_array(data)
    plan = (plan or SubsamplingPlan()).resolved(data)
    index = PatternIndex.from_mask(data.u)
    p = data.p
    med = np.array([chi2_quantile(0.5, k) for k in range(1, p + 1)])
    cut = np.array([chi2_quantile(0.975, k) for k in range(1, p + 1)])
    calib = np.ones(data.n)
    calib[index.order] = med[index.dims[index.order] - 1]
    if pool is None:
        pool = index.retained
    pool = np.asarray(pool, dtype=np.int64)
    n0 = min(plan.subsample_size, pool.size)
    if n0 < plan.subsample_size:
        log.warning("subsample size reduced to the pool size %d", n0)

    def run(j):
        return _candidate(data, pool, n0, plan.seed, j, calib, index)

    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(run, range(plan.n_subsamples)))
    else:
        results = [run(j) for j in range(plan.n_subsamples)]

    best = None
    for j, res in enumerate(results):
        if res is not None and (best is None or res[0] < best[1][0]):
            best = (j, res)
    if best is None:
        raise NumericalError("EMVE failed: no valid subsample")
    j, (score, mu, unit, rows) = best
    sigma = score * unit
    d, _ = _kernels.partial_mahalanobis(data.x, index.patterns, index.order, index.starts, mu, sigma)
    if reweight:
        mu, sigma, d = _reweight(data, mu, sigma, d, cut, calib, index)
    weights = np.zeros(data.n)
    k = index.dims[index.order] - 1
    weights[index.order] = (d[index.order] <= cut[k]).astype(float)
    est = ScatterEstimate(
        mu=mu,
        sigma=sigma,
        weights=weights,
        distances=d,
        scale=score,
        iterations=plan.n_subsamples,
        converged=True,
        method="emve-c" if plan.mode == "cluster" else "emve",
        dropped=index.dropped,
        info={
            "subsample": rows,
            "candidate_scores": np.array([np.inf if r is None else r[0] for r in results]),
        },
    )
    return est
