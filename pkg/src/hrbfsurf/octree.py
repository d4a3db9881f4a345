"""Octree over input points with leaf statistics and neighbor queries.

The octree hierarchy supplies per-leaf diagonal lengths used for support-size
tuning.  Radius and k-nearest-neighbor queries are served by a cKDTree built
over the same points; results follow the strict open-ball convention
(distance < radius) matching the kernel's open support.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

DEFAULT_LEAF_CAPACITY = 16
MAX_DEPTH = 21


@dataclass
class PointOctree:
    points: np.ndarray  # (n, 3)
    leaf_capacity: int
    leaf_point_indices: list  # one index array per leaf
    leaf_diagonals: np.ndarray  # (n_leaves,)
    root_lo: np.ndarray
    root_size: float
    tree: cKDTree = field(repr=False, default=None)

    @property
    def n_points(self):
        return len(self.points)

    @property
    def mean_leaf_diagonal(self):
        return float(self.leaf_diagonals.mean())


def build_octree(ps, leaf_capacity=DEFAULT_LEAF_CAPACITY) -> PointOctree:
    """Split points into leaves of at most leaf_capacity (depth-capped).

    ``ps`` is a HermitePointSet or an (n, 3) array.
    """
    points = np.asarray(getattr(ps, "points", ps), dtype=np.float64)
    if len(points) == 0:
        raise ValueError("empty point set")
    if leaf_capacity < 1:
        raise ValueError("leaf_capacity must be >= 1")
    lo = points.min(axis=0)
    hi = points.max(axis=0)
    size = float((hi - lo).max())
    if size == 0.0:
        size = 1.0  # all points coincident; single degenerate leaf cube
    leaf_indices = []
    leaf_diagonals = []

    # Iterative subdivision; child order is fixed so the result is
    # deterministic for a fixed input order.
    stack = [(np.arange(len(points)), lo.copy(), size, 0)]
    while stack:
        idx, node_lo, node_size, depth = stack.pop()
        if len(idx) <= leaf_capacity or depth >= MAX_DEPTH:
            leaf_indices.append(idx)
            leaf_diagonals.append(node_size * np.sqrt(3.0))
            continue
        half = node_size / 2.0
        center = node_lo + half
        pts = points[idx]
        octant = (
            (pts[:, 0] >= center[0]).astype(np.int8) * 4
            + (pts[:, 1] >= center[1]).astype(np.int8) * 2
            + (pts[:, 2] >= center[2]).astype(np.int8)
        )
        for o in range(8):
            sub = idx[octant == o]
            if len(sub) == 0:
                continue
            off = np.array([(o >> 2) & 1, (o >> 1) & 1, o & 1], dtype=np.float64)
            stack.append((sub, node_lo + off * half, half, depth + 1))

    return PointOctree(
        points=points,
        leaf_capacity=leaf_capacity,
        leaf_point_indices=leaf_indices,
        leaf_diagonals=np.array(leaf_diagonals),
        root_lo=lo,
        root_size=size,
        tree=cKDTree(points),
    )


def radius_query(idx: PointOctree, center, radius):
    """Indices with ||p - center|| strictly below radius, ascending."""
    if radius <= 0:
        raise ValueError("radius must be positive")
    center = np.asarray(center, dtype=np.float64)
    cand = idx.tree.query_ball_point(center, radius)
    cand = np.asarray(sorted(cand), dtype=np.int64)
    if len(cand) == 0:
        return cand
    d = np.linalg.norm(idx.points[cand] - center, axis=1)
    return cand[d < radius]


def knn_query(idx: PointOctree, center, k, exclude_self=False):
    """k nearest neighbors sorted by (distance, index).

    With exclude_self, at most one zero-distance hit is dropped (the query
    point itself when it is one of the indexed points).
    """
    n = idx.n_points
    avail = n - (1 if exclude_self else 0)
    if k < 1 or k > avail:
        raise ValueError(f"k={k} out of range (have {avail} points)")
    center = np.asarray(center, dtype=np.float64)
    # Over-fetch so distance ties can be re-broken by index deterministically.
    kq = min(n, k + 8)
    while True:
        d, i = idx.tree.query(center, k=kq)
        d, i = np.atleast_1d(d), np.atleast_1d(i)
        if exclude_self:
            zero = np.flatnonzero(d == 0.0)
            if len(zero):
                keep = np.ones(len(d), dtype=bool)
                keep[zero[0]] = False
                d, i = d[keep], i[keep]
        if len(d) >= k and (kq == n or d[k - 1] < d[-1]):
            break
        if kq == n:
            break
        kq = min(n, kq * 2)
    order = np.lexsort((i, d))
    d, i = d[order], i[order]
    return list(zip(i[:k].tolist(), d[:k].tolist()))


def strict_counts(idx: PointOctree, centers, radii, workers=1):
    """Count points with distance strictly below radius per center (vectorized)."""
    centers = np.asarray(centers, dtype=np.float64)
    radii = np.asarray(radii, dtype=np.float64)
    # cKDTree uses <=; shrinking the radius by one ulp makes exact-boundary
    # hits fall outside, which matches the open-ball convention.
    r = np.nextafter(radii, 0.0)
    return idx.tree.query_ball_point(centers, r, return_length=True, workers=workers)
