"""Octree build invariants and neighbor queries against brute-force oracles."""

import numpy as np
import pytest

from hrbfsurf.octree import build_octree, knn_query, radius_query, strict_counts


@pytest.fixture(scope="module")
def cloud():
    rng = np.random.default_rng(42)
    return rng.uniform(-1.0, 1.0, (500, 3))


@pytest.fixture(scope="module")
def index(cloud):
    return build_octree(cloud, leaf_capacity=8)


def test_leaves_partition_points(cloud, index):
    seen = np.concatenate(index.leaf_point_indices)
    assert len(seen) == len(cloud)
    assert np.array_equal(np.sort(seen), np.arange(len(cloud)))
    for leaf in index.leaf_point_indices:
        assert 1 <= len(leaf)


def test_leaf_capacity_respected(cloud, index):
    # depth cap can only matter for coincident points, not a random cloud
    for leaf in index.leaf_point_indices:
        assert len(leaf) <= 8


def test_mean_leaf_diagonal_positive(index):
    assert index.mean_leaf_diagonal > 0.0
    assert np.all(index.leaf_diagonals > 0.0)
    assert index.leaf_diagonals.max() <= index.root_size * np.sqrt(3.0) + 1e-12


def test_build_deterministic(cloud):
    a = build_octree(cloud, leaf_capacity=8)
    b = build_octree(cloud, leaf_capacity=8)
    assert len(a.leaf_point_indices) == len(b.leaf_point_indices)
    for la, lb in zip(a.leaf_point_indices, b.leaf_point_indices):
        assert np.array_equal(la, lb)


def test_build_rejects_bad_input():
    with pytest.raises(ValueError):
        build_octree(np.empty((0, 3)))
    with pytest.raises(ValueError):
        build_octree(np.zeros((4, 3)), leaf_capacity=0)


def test_coincident_points_terminate():
    idx = build_octree(np.zeros((40, 3)), leaf_capacity=4)
    assert sum(len(l) for l in idx.leaf_point_indices) == 40


def test_radius_query_matches_brute_force(cloud, index):
    rng = np.random.default_rng(3)
    for _ in range(25):
        c = rng.uniform(-1.2, 1.2, 3)
        r = rng.uniform(0.1, 0.8)
        got = radius_query(index, c, r)
        d = np.linalg.norm(cloud - c, axis=1)
        expect = np.flatnonzero(d < r)
        assert np.array_equal(got, expect)


def test_radius_query_strict_boundary():
    pts = np.array([[0.0, 0.0, 0.0], [0.5, 0.0, 0.0], [1.0, 0.0, 0.0]])
    idx = build_octree(pts)
    got = radius_query(idx, np.zeros(3), 0.5)
    assert got.tolist() == [0]  # the point at exactly r=0.5 is excluded


def test_radius_query_rejects_nonpositive():
    idx = build_octree(np.zeros((4, 3)) + np.arange(4)[:, None])
    with pytest.raises(ValueError):
        radius_query(idx, np.zeros(3), 0.0)


def test_knn_matches_brute_force(cloud, index):
    rng = np.random.default_rng(5)
    for _ in range(20):
        c = rng.uniform(-1.0, 1.0, 3)
        k = int(rng.integers(1, 12))
        got = knn_query(index, c, k)
        d = np.linalg.norm(cloud - c, axis=1)
        order = np.lexsort((np.arange(len(cloud)), d))[:k]
        assert [i for i, _ in got] == order.tolist()
        np.testing.assert_allclose([dd for _, dd in got], d[order], rtol=1e-12)


def test_knn_exclude_self(cloud, index):
    got = knn_query(index, cloud[17], 3, exclude_self=True)
    assert 17 not in [i for i, _ in got]
    assert all(dd > 0 for _, dd in got)


def test_knn_tie_break_by_index():
    # four points at identical distance from the origin
    pts = np.array(
        [[1.0, 0, 0], [0, 1.0, 0], [-1.0, 0, 0], [0, -1.0, 0], [3.0, 0, 0]]
    )
    idx = build_octree(pts)
    got = knn_query(idx, np.zeros(3), 4)
    assert [i for i, _ in got] == [0, 1, 2, 3]


def test_knn_k_out_of_range(cloud, index):
    with pytest.raises(ValueError):
        knn_query(index, np.zeros(3), 0)
    with pytest.raises(ValueError):
        knn_query(index, np.zeros(3), len(cloud) + 1)


def test_strict_counts_matches_brute_force(cloud, index):
    rng = np.random.default_rng(6)
    centers = rng.uniform(-1.0, 1.0, (30, 3))
    radii = rng.uniform(0.05, 0.9, 30)
    got = strict_counts(index, centers, radii)
    d = np.linalg.norm(cloud[None, :, :] - centers[:, None, :], axis=2)
    expect = (d < radii[:, None]).sum(axis=1)
    assert np.array_equal(got, expect)


def test_strict_counts_boundary_exclusion():
    pts = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]])
    idx = build_octree(pts)
    got = strict_counts(idx, pts[:1], np.array([1.0]))
    assert got[0] == 1  # only the center itself; the boundary point is out
