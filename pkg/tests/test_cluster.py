import numpy as np
import pytest
from scipy.cluster.hierarchy import linkage
from scipy.spatial.distance import cdist, pdist

from cellscatter.cluster import (
    ClusterSubsampleSource,
    clean_cluster,
    cluster_projection,
    ward_hclust,
)
from cellscatter.data import Dataset
from cellscatter.errors import DegenerateError

from conftest import gaussian, with_holes


def _naive_ward(points):
    """O(n^3) Ward: merge the pair with the smallest increase in within-cluster SS."""
    clusters = {i: [i] for i in range(len(points))}
    heights = []
    nxt = len(points)
    while len(clusters) > 1:
        best = None
        keys = sorted(clusters)
        for a in range(len(keys)):
            for b in range(a + 1, len(keys)):
                A, B = points[clusters[keys[a]]], points[clusters[keys[b]]]
                na, nb = len(A), len(B)
                cost = na * nb / (na + nb) * np.sum((A.mean(0) - B.mean(0)) ** 2)
                if best is None or cost < best[0]:
                    best = (cost, keys[a], keys[b])
        cost, a, b = best
        heights.append(np.sqrt(2.0 * cost))
        clusters[nxt] = clusters.pop(a) + clusters.pop(b)
        nxt += 1
    return np.array(heights)


def test_ward_against_naive_and_monotone():
    pts = np.random.default_rng(0).standard_normal((50, 3))
    Z = ward_hclust(pts)
    np.testing.assert_allclose(Z[:, 2], _naive_ward(pts), rtol=1e-10)
    assert np.all(np.diff(Z[:, 2]) >= 0)
    np.testing.assert_allclose(Z[:, 2], linkage(pdist(pts), "ward")[:, 2], rtol=1e-10)


def test_ward_small_cases():
    Z = ward_hclust(np.array([[0.0], [1.0], [10.0]]))
    assert sorted(Z[0, :2]) == [0, 1]
    Z = ward_hclust(np.array([[0.0, 0.0], [5.0, 5.0], [5.0, 5.0], [1.0, 0.0]]))
    assert sorted(Z[0, :2]) == [1, 2] and Z[0, 2] == 0.0


def test_ward_from_sqdist_and_validation():
    pts = np.random.default_rng(1).standard_normal((10, 2))
    np.testing.assert_array_equal(ward_hclust(pts), ward_hclust(sqdist=cdist(pts, pts, "sqeuclidean")))
    with pytest.raises(ValueError):
        ward_hclust(sqdist=np.ones((3, 3)))
    with pytest.raises(ValueError):
        ward_hclust(sqdist=np.zeros((2, 3)))


def test_clean_cluster_two_cases():
    Z = ward_hclust(np.array([[0.0], [1.0]]))
    assert clean_cluster(Z, 2).tolist() == [0, 1]


def test_clean_cluster_is_smallest_on_path():
    pts = np.r_[np.zeros((6, 1)), np.full((3, 1), 10.0), np.full((3, 1), 20.0)]
    pts += np.random.default_rng(2).normal(0, 0.01, pts.shape)
    members = clean_cluster(ward_hclust(pts), 12)
    assert members.tolist() == list(range(6))


def test_projection_identity_rotation():
    x = gaussian(200, 4, seed=3)
    proj = cluster_projection(Dataset.from_array(x))
    assert proj.n_positive == 4
    b = proj.basis
    np.testing.assert_allclose(b.T @ b, np.eye(4), atol=1e-12)
    np.testing.assert_allclose(pdist(proj.z @ b), pdist(proj.z), rtol=1e-8)
    assert np.all(np.diff(proj.eigvals) <= 0)
    idx = np.argmax(np.abs(b), axis=0)
    assert np.all(b[idx, np.arange(4)] > 0)


def test_projection_zero_fill_keeps_observed():
    x = with_holes(gaussian(100, 4, seed=4), 0.2, seed=4)
    data = Dataset.from_array(x)
    proj = cluster_projection(data)
    assert np.all(proj.z[~data.u] == 0.0)
    med = np.nanmedian(x, axis=0)
    mad = 1.4826 * np.nanmedian(np.abs(x - med), axis=0)
    np.testing.assert_allclose(proj.z[data.u], ((x - med) / mad)[data.u])
    assert np.all(np.abs(proj.corr) <= 1.0)


def test_projection_degenerate_column():
    x = gaussian(30, 3, seed=5)
    x[:, 1] = 1.0
    with pytest.raises(DegenerateError):
        cluster_projection(Dataset.from_array(x))


def test_blob_audit():
    hits = []
    for seed in range(5):
        r = np.random.default_rng(seed)
        x = np.r_[r.standard_normal((140, 10)), r.standard_normal((60, 10)) + 4.0]
        src = ClusterSubsampleSource(Dataset.from_array(x))
        hits.append(np.mean(src.members < 140))
        assert src.members.size >= 100
    assert min(hits) >= 0.95


def test_source_reproducible_and_excludes_empty_rows():
    x = gaussian(60, 3, seed=6)
    x[5] = np.nan
    a = ClusterSubsampleSource(Dataset.from_array(x))
    b = ClusterSubsampleSource(Dataset.from_array(x))
    np.testing.assert_array_equal(a.linkage, b.linkage)
    assert 5 not in a.pool
    s1 = a.sample(np.random.default_rng(1), 10)
    s2 = b.sample(np.random.default_rng(1), 10)
    np.testing.assert_array_equal(s1, s2)
    assert np.isin(s1, a.pool).all()
    with pytest.raises(ValueError):
        ClusterSubsampleSource(Dataset.from_array(gaussian(10, 1)))
