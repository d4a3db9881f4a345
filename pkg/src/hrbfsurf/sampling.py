"""Synthetic oriented point clouds and reference meshes used in tests and demos."""

from __future__ import annotations

import numpy as np

from .pointset import HermitePointSet, QuadMesh


def sphere_points(n, radius=1.0, center=(0.0, 0.0, 0.0), seed=0) -> HermitePointSet:
    """Uniform samples on a sphere, normals pointing outward."""
    rng = np.random.default_rng(seed)
    v = rng.normal(size=(n, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return HermitePointSet(np.asarray(center) + radius * v, v.copy())


def torus_points(n, major=1.0, minor=0.35, seed=0) -> HermitePointSet:
    """Area-weighted samples on a torus in the xy-plane, outward normals."""
    rng = np.random.default_rng(seed)
    pts = np.empty((0, 3))
    nrm = np.empty((0, 3))
    while len(pts) < n:
        k = 2 * (n - len(pts)) + 16
        u = rng.uniform(0, 2 * np.pi, k)
        v = rng.uniform(0, 2 * np.pi, k)
        # rejection on the Jacobian so sampling is uniform in area
        accept = rng.random(k) < (major + minor * np.cos(v)) / (major + minor)
        u, v = u[accept], v[accept]
        ring = np.stack([np.cos(u), np.sin(u), np.zeros_like(u)], axis=1)
        normal = np.cos(v)[:, None] * ring
        normal[:, 2] = np.sin(v)
        p = major * ring + minor * normal
        pts = np.concatenate([pts, p])
        nrm = np.concatenate([nrm, normal])
    return HermitePointSet(pts[:n], nrm[:n])


def two_density_sphere(n_dense, n_sparse, seed=0) -> HermitePointSet:
    """Unit sphere with a dense +x hemisphere and a sparse -x hemisphere."""
    dense = sphere_points(4 * n_dense, seed=seed)
    dk = dense.points[:, 0] >= 0.0
    sparse = sphere_points(4 * n_sparse, seed=seed + 1)
    sk = sparse.points[:, 0] < 0.0
    pts = np.concatenate([dense.points[dk][:n_dense], sparse.points[sk][:n_sparse]])
    nrm = np.concatenate([dense.normals[dk][:n_dense], sparse.normals[sk][:n_sparse]])
    return HermitePointSet(pts, nrm)


def icosphere(subdivisions=4, radius=1.0) -> QuadMesh:
    """Triangle mesh of a sphere by subdividing an icosahedron."""
    t = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array(
        [
            [-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
            [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
            [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1],
        ],
        dtype=np.float64,
    )
    verts /= np.linalg.norm(verts, axis=1, keepdims=True)
    faces = np.array(
        [
            [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
            [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
            [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
            [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
        ],
        dtype=np.int64,
    )
    for _ in range(subdivisions):
        verts_list = verts.tolist()
        midpoint = {}

        def mid(i, j):
            key = (min(i, j), max(i, j))
            if key not in midpoint:
                p = (verts[i] + verts[j]) / 2.0
                p = p / np.linalg.norm(p)
                midpoint[key] = len(verts_list)
                verts_list.append(p.tolist())
            return midpoint[key]

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new_faces += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
        verts = np.asarray(verts_list)
        faces = np.asarray(new_faces, dtype=np.int64)
    verts = radius * verts / np.linalg.norm(verts, axis=1, keepdims=True)
    return QuadMesh(verts, faces, vertex_normals=verts / radius)
