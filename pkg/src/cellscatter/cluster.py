"""Cluster-based subsampling for EMVE-C.

The cases are projected on the positive-eigenvalue basis of a robust
correlation matrix, clustered with Ward's linkage, and subsamples are then
drawn only from the smallest cluster holding at least half of the cases.
"""

import logging
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from . import _kernels
from .data import Dataset
from .errors import DegenerateError
from .robust import MAD_CONSTANT, gk_cov

log = logging.getLogger(__name__)

__all__ = [
    "ClusterProjection",
    "cluster_projection",
    "ward_hclust",
    "clean_cluster",
    "ClusterSubsampleSource",
]

CLIP = 0.999
EIG_RTOL = 1e-12


def _median_mad(v):
    med = np.median(v)
    return med, MAD_CONSTANT * np.median(np.abs(v - med))


@dataclass(frozen=True)
class ClusterProjection:
    z: np.ndarray
    corr: np.ndarray
    eigvals: np.ndarray
    basis: np.ndarray
    scores: np.ndarray

    @property
    def n_positive(self):
        return self.basis.shape[1]


def _fix_signs(vecs):
    # largest-magnitude entry of each eigenvector made positive
    idx = np.argmax(np.abs(vecs), axis=0)
    signs = np.sign(vecs[idx, np.arange(vecs.shape[1])])
    signs[signs == 0] = 1.0
    return vecs * signs


def cluster_projection(data):
    """Standardize, robust correlation, eigen-projection, re-standardize."""
    if not isinstance(data, Dataset):
        data = Dataset.from_array(data)
    x, u = data.x, data.u
    n, p = x.shape
    z = np.zeros((n, p))
    for j in range(p):
        col = x[u[:, j], j]
        if col.size < 2:
            raise DegenerateError(f"column {j} has fewer than 2 observed values")
        med, s = _median_mad(col)
        if not s > 0.0:
            raise DegenerateError(f"degenerate column dispersion (column {j})")
        z[u[:, j], j] = (col - med) / s
    corr = np.eye(p)
    for j in range(p):
        for k in range(j + 1, p):
            rows = u[:, j] & u[:, k]
            if rows.sum() < 2:
                r = 0.0
            else:
                r = gk_cov(z[rows, j], z[rows, k], scale="qn")
            corr[j, k] = corr[k, j] = np.clip(r, -CLIP, CLIP)
    vals, vecs = np.linalg.eigh(corr)
    vals, vecs = vals[::-1], vecs[:, ::-1]
    vecs = _fix_signs(vecs)
    keep = vals > EIG_RTOL * vals[0]
    basis = vecs[:, keep]
    # z is already zero at missing cells
    scores = z @ basis
    for j in range(scores.shape[1]):
        med, s = _median_mad(scores[:, j])
        scores[:, j] = scores[:, j] - med
        if s > 0.0:
            scores[:, j] /= s
    return ClusterProjection(z, corr, vals, basis, scores)


def ward_hclust(points=None, sqdist=None):
    """Ward linkage matrix (scipy layout: [a, b, height, size]).

    Either the point coordinates or the matrix of squared Euclidean
    dissimilarities is given.  Heights are on the distance scale.
    """
    if sqdist is None:
        pts = np.asarray(points, dtype=float)
        if pts.ndim != 2:
            raise ValueError("points must be a 2-d array")
        sqdist = cdist(pts, pts, "sqeuclidean")
    d2 = np.array(sqdist, dtype=float)
    if d2.ndim != 2 or d2.shape[0] != d2.shape[1]:
        raise ValueError("dissimilarity must be a square matrix")
    if d2.shape[0] < 2:
        raise ValueError("need at least 2 cases to cluster")
    if not np.allclose(d2, d2.T) or np.any(np.diag(d2) != 0.0) or np.any(d2 < 0.0):
        raise ValueError("dissimilarity must be symmetric, nonnegative, with zero diagonal")
    return _kernels.ward_linkage(np.ascontiguousarray(d2))


def _members(Z, node, n):
    out = []
    stack = [node]
    while stack:
        v = stack.pop()
        if v < n:
            out.append(v)
        else:
            a, b = Z[v - n, 0], Z[v - n, 1]
            stack.extend((int(a), int(b)))
    return np.sort(np.array(out, dtype=np.int64))


def clean_cluster(Z, n):
    """Smallest internal node of the dendrogram with at least n/2 members."""
    node = 2 * n - 2
    half = 0.5 * n
    while True:
        row = Z[node - n]
        best = None
        for child in (int(row[0]), int(row[1])):
            if child < n:
                continue
            size, height = Z[child - n, 3], Z[child - n, 2]
            if size >= half:
                key = (height, child)
                if best is None or key < best[0]:
                    best = (key, child)
        if best is None:
            return _members(Z, node, n)
        node = best[1]


class ClusterSubsampleSource:
    """Cases eligible for EMVE-C subsamples."""

    def __init__(self, data):
        if not isinstance(data, Dataset):
            data = Dataset.from_array(data)
        if data.p < 2:
            raise ValueError("cluster subsampling needs p >= 2")
        self.projection = cluster_projection(data)
        self.linkage = ward_hclust(self.projection.scores)
        self.members = clean_cluster(self.linkage, data.n)
        # fully missing rows cannot enter a subsample
        observed = data.u.any(axis=1)
        self.pool = self.members[observed[self.members]]

    def sample(self, rng, size):
        return np.sort(rng.choice(self.pool, size=min(size, self.pool.size), replace=False))
