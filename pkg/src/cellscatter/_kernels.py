"""Hot numeric loops, each in a numba flavour and a pure-numpy flavour.

The public names at the bottom of the module are bound to one flavour
according to :data:`cellscatter._accel.USE_NUMBA`.  Both flavours are always
importable under their suffixed names so tests and the benchmark can compare
them directly.

Conventions shared by the kernels:

* ``family`` is 0 for Tukey's bisquare and 1 for the modified Rocke rho.
* Missingness patterns are passed pre-grouped: ``patterns`` is a (P, p) bool
  array, ``order`` lists row indices grouped by pattern and
  ``starts[g]:starts[g + 1]`` slices ``order`` for pattern ``g``.
* ``x`` must hold finite numbers everywhere; masked cells are ignored but
  must not be NaN (callers zero-fill them).
"""

import math

import numpy as np

from ._accel import USE_NUMBA, njit

TUKEY = 0
ROCKE = 1

# status codes returned by the scale root finder
SCALE_OK = 0
SCALE_DEGENERATE = 1
SCALE_NO_BRACKET = 2


# ---------------------------------------------------------------------------
# Qn: k-th smallest pairwise absolute difference


@njit
def kth_pairwise_diff_numba(x, k):
    n = x.shape[0]
    diffs = np.empty(n * (n - 1) // 2)
    pos = 0
    for i in range(n):
        xi = x[i]
        for j in range(i + 1, n):
            diffs[pos] = abs(xi - x[j])
            pos += 1
    return np.partition(diffs, k - 1)[k - 1]


def kth_pairwise_diff_numpy(x, k):
    n = x.shape[0]
    iu, ju = np.triu_indices(n, 1)
    diffs = np.abs(x[iu] - x[ju])
    return np.partition(diffs, k - 1)[k - 1]


# ---------------------------------------------------------------------------
# rho functions and the generalized M-scale root


@njit
def _rho_one(u, family, gamma):
    if family == TUKEY:
        if u >= 1.0:
            return 1.0
        t = 1.0 - u
        return 1.0 - t * t * t
    if u <= 1.0 - gamma:
        return 0.0
    if u >= 1.0 + gamma:
        return 1.0
    z = (u - 1.0) / gamma
    return (u - 1.0) / (4.0 * gamma) * (3.0 - z * z) + 0.5


@njit
def _scale_gap_numba(s, r, c, gamma, family, target):
    acc = 0.0
    for i in range(r.shape[0]):
        acc += c[i] * _rho_one(r[i] / s, family, gamma[i])
    return acc - target


@njit
def mscale_root_numba(r, c, gamma, family, b, rtol, max_expand):
    """Solve sum_i c_i rho(r_i / s) = b sum_i c_i for s > 0.

    Returns ``(s, status)``.  The left-hand side is nonincreasing in s, so
    the root is bracketed by geometric expansion and refined by bisection.
    """
    target = b * c.sum()
    rmax = r.max()
    if rmax <= 0.0:
        return 0.0, SCALE_DEGENERATE
    s0 = np.median(r)
    if s0 <= 0.0:
        s0 = rmax
    f0 = _scale_gap_numba(s0, r, c, gamma, family, target)
    count = 0
    if f0 > 0.0:
        lo = s0
        hi = 2.0 * s0
        while _scale_gap_numba(hi, r, c, gamma, family, target) > 0.0:
            lo = hi
            hi *= 2.0
            count += 1
            if count > max_expand:
                return 0.0, SCALE_NO_BRACKET
    else:
        hi = s0
        lo = 0.5 * s0
        while _scale_gap_numba(lo, r, c, gamma, family, target) <= 0.0:
            hi = lo
            lo *= 0.5
            count += 1
            if count > max_expand:
                return 0.0, SCALE_DEGENERATE
    while hi - lo > rtol * hi:
        mid = 0.5 * (lo + hi)
        if _scale_gap_numba(mid, r, c, gamma, family, target) > 0.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi), SCALE_OK


def rho_array(u, family, gamma):
    """Vectorized rho; ``gamma`` may be a scalar or an array matching ``u``."""
    u = np.asarray(u, dtype=float)
    if family == TUKEY:
        t = np.clip(1.0 - u, 0.0, None)
        return 1.0 - t ** 3
    gamma = np.broadcast_to(np.asarray(gamma, dtype=float), u.shape)
    z = (u - 1.0) / gamma
    mid = (u - 1.0) / (4.0 * gamma) * (3.0 - z * z) + 0.5
    out = np.where(u <= 1.0 - gamma, 0.0, np.where(u >= 1.0 + gamma, 1.0, mid))
    return out


def _scale_gap_numpy(s, r, c, gamma, family, target):
    return float(np.dot(c, rho_array(r / s, family, gamma))) - target


def mscale_root_numpy(r, c, gamma, family, b, rtol, max_expand):
    target = b * c.sum()
    rmax = r.max()
    if rmax <= 0.0:
        return 0.0, SCALE_DEGENERATE
    s0 = float(np.median(r))
    if s0 <= 0.0:
        s0 = float(rmax)
    count = 0
    if _scale_gap_numpy(s0, r, c, gamma, family, target) > 0.0:
        lo, hi = s0, 2.0 * s0
        while _scale_gap_numpy(hi, r, c, gamma, family, target) > 0.0:
            lo = hi
            hi *= 2.0
            count += 1
            if count > max_expand:
                return 0.0, SCALE_NO_BRACKET
    else:
        hi, lo = s0, 0.5 * s0
        while _scale_gap_numpy(lo, r, c, gamma, family, target) <= 0.0:
            hi = lo
            lo *= 0.5
            count += 1
            if count > max_expand:
                return 0.0, SCALE_DEGENERATE
    while hi - lo > rtol * hi:
        mid = 0.5 * (lo + hi)
        if _scale_gap_numpy(mid, r, c, gamma, family, target) > 0.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi), SCALE_OK


# ---------------------------------------------------------------------------
# partial squared Mahalanobis distances


@njit
def _forward_sub(L, r):
    q = r.shape[0]
    z = np.empty(q)
    for a in range(q):
        acc = r[a]
        for b in range(a):
            acc -= L[a, b] * z[b]
        z[a] = acc / L[a, a]
    return z


@njit
def partial_mahalanobis_numba(x, patterns, order, starts, mu, sigma):
    n = x.shape[0]
    dist = np.full(n, np.nan)
    logdet = np.zeros(n)
    for g in range(patterns.shape[0]):
        obs = np.nonzero(patterns[g])[0]
        q = obs.shape[0]
        if q == 0:
            continue
        S = np.empty((q, q))
        for a in range(q):
            for b in range(q):
                S[a, b] = sigma[obs[a], obs[b]]
        L = np.linalg.cholesky(S)
        ld = 0.0
        for a in range(q):
            ld += 2.0 * math.log(L[a, a])
        r = np.empty(q)
        for t in range(starts[g], starts[g + 1]):
            i = order[t]
            for a in range(q):
                r[a] = x[i, obs[a]] - mu[obs[a]]
            z = _forward_sub(L, r)
            dist[i] = np.dot(z, z)
            logdet[i] = ld
    return dist, logdet


def partial_mahalanobis_numpy(x, patterns, order, starts, mu, sigma):
    n = x.shape[0]
    dist = np.full(n, np.nan)
    logdet = np.zeros(n)
    for g in range(patterns.shape[0]):
        obs = np.nonzero(patterns[g])[0]
        if obs.size == 0:
            continue
        rows = order[starts[g]:starts[g + 1]]
        L = np.linalg.cholesky(sigma[np.ix_(obs, obs)])
        R = x[np.ix_(rows, obs)] - mu[obs]
        Z = np.linalg.solve(L, R.T)
        dist[rows] = np.einsum("ij,ij->j", Z, Z)
        logdet[rows] = 2.0 * np.log(np.diag(L)).sum()
    return dist, logdet


# ---------------------------------------------------------------------------
# weighted E-step moments


@njit
def estep_moments_numba(x, patterns, order, starts, mu, sigma, w):
    """Weighted sums of completed, centred cases.

    With y_i the EM completion of case i minus ``mu`` and C_i its conditional
    covariance (zero on observed coordinates), returns
    ``(sum w_i, sum w_i y_i, sum w_i (y_i y_i' + C_i))``.
    """
    p = x.shape[1]
    sw = 0.0
    sy = np.zeros(p)
    syy = np.zeros((p, p))
    for g in range(patterns.shape[0]):
        obs = np.nonzero(patterns[g])[0]
        mis = np.nonzero(~patterns[g])[0]
        q = obs.shape[0]
        m = mis.shape[0]
        if q == 0:
            continue
        S = np.empty((q, q))
        for a in range(q):
            for b in range(q):
                S[a, b] = sigma[obs[a], obs[b]]
        B = np.zeros((m, q))
        C = np.zeros((m, m))
        if m > 0:
            Smo = np.empty((m, q))
            for a in range(m):
                for b in range(q):
                    Smo[a, b] = sigma[mis[a], obs[b]]
            B = np.linalg.solve(S, Smo.T).T
            for a in range(m):
                for b in range(m):
                    acc = sigma[mis[a], mis[b]]
                    for t in range(q):
                        acc -= B[a, t] * Smo[b, t]
                    C[a, b] = acc
        y = np.empty(p)
        r = np.empty(q)
        wsum = 0.0
        for t in range(starts[g], starts[g + 1]):
            i = order[t]
            wi = w[i]
            if wi == 0.0:
                continue
            for a in range(q):
                r[a] = x[i, obs[a]] - mu[obs[a]]
                y[obs[a]] = r[a]
            for a in range(m):
                acc = 0.0
                for b in range(q):
                    acc += B[a, b] * r[b]
                y[mis[a]] = acc
            wsum += wi
            for a in range(p):
                wy = wi * y[a]
                sy[a] += wy
                for b in range(p):
                    syy[a, b] += wy * y[b]
        sw += wsum
        if m > 0 and wsum > 0.0:
            for a in range(m):
                for b in range(m):
                    syy[mis[a], mis[b]] += wsum * C[a, b]
    return sw, sy, syy


def estep_moments_numpy(x, patterns, order, starts, mu, sigma, w):
    p = x.shape[1]
    sw = 0.0
    sy = np.zeros(p)
    syy = np.zeros((p, p))
    for g in range(patterns.shape[0]):
        obs = np.nonzero(patterns[g])[0]
        mis = np.nonzero(~patterns[g])[0]
        if obs.size == 0:
            continue
        rows = order[starts[g]:starts[g + 1]]
        wg = w[rows]
        keep = wg != 0.0
        rows, wg = rows[keep], wg[keep]
        if rows.size == 0:
            continue
        Y = np.empty((rows.size, p))
        R = x[np.ix_(rows, obs)] - mu[obs]
        Y[:, obs] = R
        wsum = wg.sum()
        if mis.size:
            Soo = sigma[np.ix_(obs, obs)]
            Smo = sigma[np.ix_(mis, obs)]
            B = np.linalg.solve(Soo, Smo.T).T
            Y[:, mis] = R @ B.T
            C = sigma[np.ix_(mis, mis)] - B @ Smo.T
            syy[np.ix_(mis, mis)] += wsum * C
        sw += wsum
        sy += wg @ Y
        syy += (Y * wg[:, None]).T @ Y
    return sw, sy, syy


# ---------------------------------------------------------------------------
# Ward linkage by Lance-Williams updates on squared distances


@njit
def ward_linkage_numba(d2):
    n = d2.shape[0]
    D = d2.copy()
    active = np.ones(n, dtype=np.bool_)
    size = np.ones(n)
    ids = np.arange(n)
    Z = np.zeros((n - 1, 4))
    for step in range(n - 1):
        best = np.inf
        bi = -1
        bj = -1
        for i in range(n):
            if not active[i]:
                continue
            for j in range(i + 1, n):
                if active[j] and D[i, j] < best:
                    best = D[i, j]
                    bi = i
                    bj = j
        a = ids[bi]
        b = ids[bj]
        ni = size[bi]
        nj = size[bj]
        Z[step, 0] = min(a, b)
        Z[step, 1] = max(a, b)
        Z[step, 2] = math.sqrt(max(best, 0.0))
        Z[step, 3] = ni + nj
        for k in range(n):
            if not active[k] or k == bi or k == bj:
                continue
            nk = size[k]
            val = ((ni + nk) * D[bi, k] + (nj + nk) * D[bj, k] - nk * best) / (ni + nj + nk)
            D[bi, k] = val
            D[k, bi] = val
        active[bj] = False
        size[bi] = ni + nj
        ids[bi] = n + step
    return Z


def ward_linkage_numpy(d2):
    n = d2.shape[0]
    # upper-triangular working copy; inf marks pairs that cannot merge
    M = np.where(np.triu(np.ones((n, n), dtype=bool), 1), d2, np.inf)
    size = np.ones(n)
    ids = np.arange(n)
    active = np.ones(n, dtype=bool)
    Z = np.zeros((n - 1, 4))
    for step in range(n - 1):
        flat = int(np.argmin(M))
        bi, bj = divmod(flat, n)
        best = M[bi, bj]
        ni, nj = size[bi], size[bj]
        a, b = ids[bi], ids[bj]
        Z[step] = (min(a, b), max(a, b), math.sqrt(max(best, 0.0)), ni + nj)
        others = active.copy()
        others[[bi, bj]] = False
        k = np.nonzero(others)[0]
        dik = np.where(k < bi, M[k, bi], M[bi, k])
        djk = np.where(k < bj, M[k, bj], M[bj, k])
        nk = size[k]
        val = ((ni + nk) * dik + (nj + nk) * djk - nk * best) / (ni + nj + nk)
        lower = k < bi
        M[k[lower], bi] = val[lower]
        M[bi, k[~lower]] = val[~lower]
        M[bj, :] = np.inf
        M[:, bj] = np.inf
        active[bj] = False
        size[bi] = ni + nj
        ids[bi] = n + step
    return Z


# ---------------------------------------------------------------------------
# Gaussian EM on a small row subset (EMVE candidates)

EM_OK = 0
EM_DEGENERATE = 1
EM_SINGULAR = 2


@njit
def _chol(A):
    """Lower Cholesky factor, or an empty array when A is not positive definite."""
    q = A.shape[0]
    L = np.zeros((q, q))
    for a in range(q):
        acc = A[a, a]
        for t in range(a):
            acc -= L[a, t] * L[a, t]
        if not acc > 0.0:
            return np.zeros((0, 0))
        L[a, a] = math.sqrt(acc)
        for b in range(a + 1, q):
            acc = A[b, a]
            for t in range(a):
                acc -= L[b, t] * L[a, t]
            L[b, a] = acc / L[a, a]
    return L


@njit
def _em_start(x, u, rows):
    p = x.shape[1]
    mu = np.zeros(p)
    sigma = np.zeros((p, p))
    for j in range(p):
        cnt = 0
        acc = 0.0
        for i in rows:
            if u[i, j]:
                cnt += 1
                acc += x[i, j]
        if cnt < 2:
            return mu, sigma, False
        mu[j] = acc / cnt
        acc = 0.0
        for i in rows:
            if u[i, j]:
                acc += (x[i, j] - mu[j]) ** 2
        sigma[j, j] = acc / cnt
        if not sigma[j, j] > 0.0:
            return mu, sigma, False
    return mu, sigma, True


@njit
def em_subsample_numba(x, u, rows, max_iter, tol):
    """Normal-theory EM restricted to ``rows``.

    Returns ``(mu, sigma, iterations, status)``; the start is the
    available-case means with a diagonal of available-case variances.
    """
    p = x.shape[1]
    m = rows.shape[0]
    mu, sigma, ok = _em_start(x, u, rows)
    if not ok:
        return mu, sigma, 0, EM_DEGENERATE
    it = 0
    for it in range(1, max_iter + 1):
        sy = np.zeros(p)
        syy = np.zeros((p, p))
        y = np.empty(p)
        for i in rows:
            obs = np.nonzero(u[i])[0]
            mis = np.nonzero(~u[i])[0]
            q = obs.shape[0]
            k = mis.shape[0]
            S = np.empty((q, q))
            for a in range(q):
                for b in range(q):
                    S[a, b] = sigma[obs[a], obs[b]]
            L = _chol(S)
            if L.shape[0] == 0:
                return mu, sigma, it, EM_SINGULAR
            r = np.empty(q)
            for a in range(q):
                r[a] = x[i, obs[a]] - mu[obs[a]]
                y[obs[a]] = r[a]
            if k > 0:
                # alpha = S^-1 r, then B = Smo S^-1 column by column
                z = _forward_sub(L, r)
                alpha = np.empty(q)
                for a in range(q - 1, -1, -1):
                    acc = z[a]
                    for b in range(a + 1, q):
                        acc -= L[b, a] * alpha[b]
                    alpha[a] = acc / L[a, a]
                for a in range(k):
                    acc = 0.0
                    for b in range(q):
                        acc += sigma[mis[a], obs[b]] * alpha[b]
                    y[mis[a]] = acc
                # conditional covariance Smm - Smo S^-1 Som via W = L^-1 Som
                W = np.empty((q, k))
                for a in range(k):
                    col = np.empty(q)
                    for b in range(q):
                        col[b] = sigma[obs[b], mis[a]]
                    W[:, a] = _forward_sub(L, col)
                for a in range(k):
                    for b in range(k):
                        acc = sigma[mis[a], mis[b]]
                        for t in range(q):
                            acc -= W[t, a] * W[t, b]
                        syy[mis[a], mis[b]] += acc
            for a in range(p):
                sy[a] += y[a]
                for b in range(p):
                    syy[a, b] += y[a] * y[b]
        new = np.empty((p, p))
        for a in range(p):
            sy[a] = sy[a] / m
        for a in range(p):
            for b in range(p):
                new[a, b] = syy[a, b] / m - sy[a] * sy[b]
        # changes measured in units of the current coordinate scales
        change = 0.0
        for a in range(p):
            sa = np.sqrt(new[a, a])
            change = max(change, abs(sy[a]) / sa)
            for b in range(p):
                change = max(change, abs(new[a, b] - sigma[a, b]) / (sa * np.sqrt(new[b, b])))
        for a in range(p):
            mu[a] += sy[a]
            for b in range(p):
                sigma[a, b] = new[a, b]
        if change <= tol:
            break
    return mu, sigma, it, EM_OK


def scaled_change(dmu, dsigma, sigma):
    """Largest parameter change in units of the coordinate scales of ``sigma``."""
    sd = np.sqrt(np.diag(sigma))
    return max(np.abs(dmu / sd).max(), np.abs(dsigma / np.outer(sd, sd)).max())


def em_subsample_numpy(x, u, rows, max_iter, tol):
    p = x.shape[1]
    m = rows.shape[0]
    xs = x[rows]
    us = u[rows]
    cnt = us.sum(axis=0)
    mu = np.zeros(p)
    sigma = np.zeros((p, p))
    if np.any(cnt < 2):
        return mu, sigma, 0, EM_DEGENERATE
    mu = (xs * us).sum(axis=0) / cnt
    var = (np.where(us, xs - mu, 0.0) ** 2).sum(axis=0) / cnt
    if not np.all(var > 0.0):
        return mu, np.diag(var), 0, EM_DEGENERATE
    sigma = np.diag(var)
    it = 0
    for it in range(1, max_iter + 1):
        Y = np.empty((m, p))
        corr = np.zeros((p, p))
        for t in range(m):
            obs = us[t]
            mis = ~obs
            r = xs[t, obs] - mu[obs]
            Y[t, obs] = r
            try:
                L = np.linalg.cholesky(sigma[np.ix_(obs, obs)])
            except np.linalg.LinAlgError:
                return mu, sigma, it, EM_SINGULAR
            if not mis.any():
                continue
            Som = sigma[np.ix_(obs, mis)]
            Y[t, mis] = Som.T @ np.linalg.solve(L.T, np.linalg.solve(L, r))
            W = np.linalg.solve(L, Som)
            corr[np.ix_(mis, mis)] += sigma[np.ix_(mis, mis)] - W.T @ W
        delta = Y.mean(axis=0)
        new = (Y.T @ Y + corr) / m - np.outer(delta, delta)
        change = scaled_change(delta, new - sigma, new)
        sigma = new
        mu = mu + delta
        if change <= tol:
            break
    return mu, sigma, it, EM_OK


# ---------------------------------------------------------------------------
# dispatch

if USE_NUMBA:
    kth_pairwise_diff = kth_pairwise_diff_numba
    mscale_root = mscale_root_numba
    partial_mahalanobis = partial_mahalanobis_numba
    estep_moments = estep_moments_numba
    ward_linkage = ward_linkage_numba
    em_subsample = em_subsample_numba
else:
    kth_pairwise_diff = kth_pairwise_diff_numpy
    mscale_root = mscale_root_numpy
    partial_mahalanobis = partial_mahalanobis_numpy
    estep_moments = estep_moments_numpy
    ward_linkage = ward_linkage_numpy
    em_subsample = em_subsample_numpy
