"""Generalized S-estimators of location and scatter for incomplete data.

The scale of a candidate (mu, Sigma) is the generalized M-scale of the
determinant-normalized partial distances; the estimator minimizes it over
(mu, Sigma) while Sigma is kept on the scale that makes the same M-scale,
computed with Sigma in place of the initial scatter, equal to one.

Iterations are reweighted EM steps: weights from the current distances,
conditional-mean completion of the missing coordinates and a weighted
moment update, followed by the rescaling above.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .data import Dataset, PatternIndex
from .errors import DegenerateError, NumericalError
from .rho import ROCKE, TUKEY, RhoSpec, tuning_constant, weight

log = logging.getLogger(__name__)

__all__ = ["ScatterEstimate", "gse_scale", "gse_fit", "gre_fit", "constraint_residual"]

SCALE_RTOL = 1e-10
MAX_EXPAND = 200


@dataclass
class ScatterEstimate:
    mu: np.ndarray
    sigma: np.ndarray
    weights: np.ndarray
    distances: np.ndarray
    scale: float
    iterations: int = 0
    converged: bool = True
    method: str = ""
    objective_trace: list = field(default_factory=list)
    dropped: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    info: dict = field(default_factory=dict)


class _Problem:
    """Pattern index, per-case constants and helpers shared by the iterations."""

    def __init__(self, data, spec):
        self.data = data
        self.spec = spec
        self.index = PatternIndex.from_mask(data.u)
        if self.index.order.size == 0:
            raise DegenerateError("no case has an observed coordinate")
        self.rows = np.sort(self.index.order)
        dims = self.index.dims
        self.dims = dims
        p = data.p
        c_tab = np.array([tuning_constant(k, spec) for k in range(1, p + 1)])
        g_tab = np.array([spec.gamma(k) for k in range(1, p + 1)])
        wmax = np.array([spec.max_weight(k) for k in range(1, p + 1)])
        d = dims[self.rows] - 1
        self.c = c_tab[d]
        self.gamma = g_tab[d]
        self.wmax = wmax[d]
        self.pdim = dims[self.rows].astype(float)

    def distances(self, mu, sigma):
        ix = self.index
        try:
            d, ld = _kernels.partial_mahalanobis(
                self.data.x, ix.patterns, ix.order, ix.starts,
                np.ascontiguousarray(mu, dtype=float), np.ascontiguousarray(sigma, dtype=float),
            )
        except np.linalg.LinAlgError as exc:
            raise NumericalError("scatter matrix is not positive definite") from exc
        return d[self.rows], ld[self.rows]

    def mscale(self, r):
        s, status = _kernels.mscale_root(
            np.ascontiguousarray(r), self.c, self.gamma, self.spec.code,
            self.spec.b, SCALE_RTOL, MAX_EXPAND,
        )
        if status == _kernels.SCALE_DEGENERATE:
            raise DegenerateError("degenerate configuration: too many zero distances")
        if status != _kernels.SCALE_OK:
            raise NumericalError("generalized M-scale: no root in bracket")
        return s

    def weights(self, u):
        out = np.zeros(u.size)
        if self.spec.family == TUKEY:
            inside = u <= 1.0
            out[inside] = 3.0 * (1.0 - u[inside]) ** 2
        else:
            z = (u - 1.0) / self.gamma
            inside = np.abs(z) <= 1.0
            out[inside] = 0.75 / self.gamma[inside] * (1.0 - z[inside] ** 2)
        return out


def _as_dataset(data):
    return data if isinstance(data, Dataset) else Dataset.from_array(data)


def gse_scale(mu, sigma, omega0, data, spec):
    """Generalized M-scale s_GS(mu, sigma, omega0) of ``data``."""
    prob = _Problem(_as_dataset(data), spec)
    d, ld = prob.distances(mu, sigma)
    _, ld0 = prob.distances(mu, omega0)
    r = d * np.exp((ld - ld0) / prob.pdim) / prob.c
    return prob.mscale(r)


def constraint_residual(estimate, data, spec):
    """s_GS(mu, sigma, sigma) - 1 for a fitted estimate."""
    return gse_scale(estimate.mu, estimate.sigma, estimate.sigma, data, spec) - 1.0


def _check_identifiable(u, rows):
    uu = u[rows].astype(float)
    co = uu.T @ uu
    if np.any(co == 0.0):
        j, k = np.argwhere(co == 0.0)[0]
        raise DegenerateError(f"coordinates {j} and {k} are never jointly observed")


class _State:
    __slots__ = ("mu", "sigma", "objective", "u", "w", "d")


def _evaluate(prob, mu, sigma, ld0):
    """Rescale sigma onto the constraint and score it against omega0."""
    d, ld = prob.distances(mu, sigma)
    # constraint: with omega0 = sigma the scaled distances are d / c
    s_c = prob.mscale(d / prob.c)
    sigma = sigma * s_c
    d = d / s_c
    ld = ld + prob.pdim * np.log(s_c)
    r = d * np.exp((ld - ld0) / prob.pdim) / prob.c
    s = prob.mscale(r)
    st = _State()
    st.mu, st.sigma, st.objective = mu, sigma, s
    st.u = r / s
    st.w = prob.weights(st.u)
    st.d = d
    return st


def _update(prob, st):
    w = np.zeros(prob.data.n)
    w[prob.rows] = st.w
    ix = prob.index
    try:
        sw, sy, syy = _kernels.estep_moments(
            prob.data.x, ix.patterns, ix.order, ix.starts, st.mu, st.sigma, w,
        )
    except np.linalg.LinAlgError as exc:
        raise NumericalError("singular scatter update") from exc
    if not sw > 0.0:
        raise NumericalError("all case weights vanished")
    delta = sy / sw
    mu = st.mu + delta
    sigma = syy / sw - np.outer(delta, delta)
    sigma = 0.5 * (sigma + sigma.T)
    evals = np.linalg.eigvalsh(sigma)
    if not evals[0] > 0.0 or evals[-1] / evals[0] > 1e12:
        raise NumericalError("singular scatter update")
    return mu, sigma


def gse_fit(data, initial, spec=None, max_iter=150, tol=1e-6, halving_steps=4):
    """Generalized S-estimate started from ``initial`` (anything with mu, sigma).

    The initial scatter stays fixed as the normalizing matrix of the scale.
    The objective is monitored: a step that increases it is first halved
    towards the previous iterate, and two increases in a row stop the
    iterations; the best iterate seen is returned.
    """
    data = _as_dataset(data)
    spec = spec or RhoSpec(TUKEY)
    prob = _Problem(data, spec)
    if prob.rows.size < data.p + 1:
        raise DegenerateError(f"need at least p + 1 = {data.p + 1} cases with observed values")
    _check_identifiable(data.u, prob.rows)
    mu0 = np.array(initial.mu, dtype=float)
    omega0 = np.array(initial.sigma, dtype=float)
    _, ld0 = prob.distances(mu0, omega0)

    st = _evaluate(prob, mu0, omega0, ld0)
    best = st
    trace = [st.objective]
    increases = 0
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        mu, sigma = _update(prob, st)
        new = _evaluate(prob, mu, sigma, ld0)
        if new.objective > st.objective:
            for h in range(1, halving_steps + 1):
                t = 0.5 ** h
                trial = _evaluate(prob, st.mu + t * (mu - st.mu), st.sigma + t * (new.sigma - st.sigma), ld0)
                if trial.objective <= st.objective:
                    new = trial
                    break
        rel = abs(st.objective - new.objective) / st.objective
        increases = increases + 1 if new.objective > st.objective else 0
        st = new
        trace.append(st.objective)
        if st.objective < best.objective:
            best = st
        if increases >= 2:
            log.debug("objective increased twice in a row; stopping at iteration %d", it)
            break
        if rel < tol:
            converged = True
            break

    n = data.n
    weights = np.zeros(n)
    weights[prob.rows] = best.w / prob.wmax
    distances = np.full(n, np.nan)
    distances[prob.rows] = best.d
    return ScatterEstimate(
        mu=best.mu,
        sigma=0.5 * (best.sigma + best.sigma.T),
        weights=weights,
        distances=distances,
        scale=best.objective,
        iterations=it,
        converged=converged,
        method="gre" if spec.family == ROCKE else "gse",
        objective_trace=trace,
        dropped=prob.index.dropped,
    )


def gre_fit(data, initial, alpha=0.05, max_iter=150, tol=1e-6):
    """Generalized Rocke S-estimate (Rocke rho with per-dimension gamma)."""
    return gse_fit(data, initial, RhoSpec(ROCKE, rocke_alpha=alpha), max_iter=max_iter, tol=tol)


def case_weights(u, spec, dims):
    """Weights for scaled distances ``u`` of cases with observed dimensions ``dims``."""
    return np.array([weight(ui, spec, int(k)) for ui, k in zip(u, dims)])
