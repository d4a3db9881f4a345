"""Dual-contouring variant over fixed-width voxels restricted to supported space.

A voxel participates only when all eight corner values are defined (covered by
at least one kernel support) and carry different signs; regions without data
therefore produce open mesh boundaries instead of fabricated geometry.  One
vertex is placed per active voxel by a regularized quadric minimization over
its edge intersections, and one quad is emitted per interior sign-change edge.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .model import LatticeTable, axis_edge_roots
from .pointset import QuadMesh

_BITS = 20
_BIAS = 1 << (_BITS - 1)
_MASK = (1 << _BITS) - 1

BISECTION_ITERS = 32
QEF_REG = 1e-3
DEFAULT_MAX_ACTIVE = 5_000_000

# corner index = dx*4 + dy*2 + dz
_CORNER_OFFSETS = np.array(
    [[dx, dy, dz] for dx in (0, 1) for dy in (0, 1) for dz in (0, 1)], dtype=np.int64
)
# voxel edges as (corner_a, corner_b, axis); corner_a is the lower end
_EDGES = np.array(
    [(0, 4, 0), (2, 6, 0), (1, 5, 0), (3, 7, 0),
     (0, 2, 1), (4, 6, 1), (1, 3, 1), (5, 7, 1),
     (0, 1, 2), (2, 3, 2), (4, 5, 2), (6, 7, 2)],
    dtype=np.int64,
)
# voxels around an edge along axis a, as offsets on the two other axes (u, v)
# with (u, v, a) right-handed; cycle order is CCW seen from +a
_RING = np.array([[-1, -1], [0, -1], [0, 0], [-1, 0]], dtype=np.int64)
_UV = {0: (1, 2), 1: (2, 0), 2: (0, 1)}


def _pack(coords):
    c = np.asarray(coords, dtype=np.int64) + _BIAS
    return (c[..., 0] << (2 * _BITS)) | (c[..., 1] << _BITS) | c[..., 2]


def _unpack(keys):
    keys = np.asarray(keys, dtype=np.int64)
    out = np.empty(keys.shape + (3,), dtype=np.int64)
    out[..., 0] = (keys >> (2 * _BITS)) & _MASK
    out[..., 1] = (keys >> _BITS) & _MASK
    out[..., 2] = keys & _MASK
    return out - _BIAS


@dataclass
class VoxelGrid:
    width: float
    origin: np.ndarray  # lattice anchor; corner (i,j,k) sits at origin + (i,j,k)*w
    coords: np.ndarray  # (M, 3) integer coords of active voxels
    corner_values: np.ndarray  # (M, 8)

    @property
    def n_active(self):
        return len(self.coords)

    def corner_position(self, coords):
        return self.origin + np.asarray(coords, dtype=np.float64) * self.width


@dataclass
class EdgeIntersection:
    position: np.ndarray
    normal: np.ndarray


class ActiveSetOverflow(MemoryError):
    def __init__(self, width, suggested):
        super().__init__(
            f"active voxel set exceeds the cap at width {width:g}; retry with w >= {suggested:g}"
        )
        self.suggested_width = suggested


def _sign_change(values):
    """True where an 8-corner row has both negative and non-negative values."""
    return (values.min(axis=1) < 0.0) & (values.max(axis=1) >= 0.0)


class _CornerCache:
    def __init__(self, field, origin, width):
        self.field = field
        self.origin = origin
        self.width = width
        self.values = {}

    def fetch(self, keys):
        """Values for packed corner keys, evaluating uncached ones in one batch."""
        flat = keys.ravel()
        uniq = np.unique(flat)
        known = self.values
        missing = [k for k in uniq.tolist() if k not in known]
        if missing:
            coords = _unpack(np.asarray(missing, dtype=np.int64))
            pos = self.origin + coords * self.width
            vals, _, defined = self.field.evaluate(pos)
            vals = np.where(defined, vals, np.nan)
            for k, v in zip(missing, vals.tolist()):
                known[k] = v
        out = np.fromiter((known[k] for k in flat.tolist()), dtype=np.float64, count=flat.size)
        return out.reshape(keys.shape)


class _LatticeCornerCache:
    """Packed-key front end over a precomputed lattice value table."""

    def __init__(self, table):
        self.table = table

    def fetch(self, keys):
        return self.table.fetch(_unpack(keys))


def _make_corner_cache(field, origin, width, workers=1):
    model = getattr(field, "model", None)
    if model is not None:
        try:
            return _LatticeCornerCache(LatticeTable(model, origin, width, workers=workers))
        except MemoryError:
            pass  # lattice too large; fall back to on-demand evaluation
    return _CornerCache(field, origin, width)


def collect_active_voxels(
    field,
    centers,
    normals,
    width,
    seed_steps=3,
    max_active=DEFAULT_MAX_ACTIVE,
    workers=1,
) -> VoxelGrid:
    """Find sign-change voxels with fully defined corners near the centers.

    Seeds are the voxels containing each center and probes offset along its
    normal by up to seed_steps voxel widths (the zero level set can sit away
    from noisy points); the active set then grows by face-adjacency.
    """
    if width <= 0:
        raise ValueError("width must be positive")
    centers = np.asarray(centers, dtype=np.float64).reshape(-1, 3)
    normals = np.asarray(normals, dtype=np.float64).reshape(-1, 3)
    origin = centers.min(axis=0) - 2.0 * width  # global lattice anchor

    seeds = [centers]
    for t in range(1, seed_steps + 1):
        seeds.append(centers + t * width * normals)
        seeds.append(centers - t * width * normals)
    seed_coords = np.floor((np.concatenate(seeds) - origin) / width).astype(np.int64)
    frontier = np.unique(_pack(seed_coords))

    cache = _make_corner_cache(field, origin, width, workers)
    tested = set()
    active_keys, active_coords, active_vals = [], [], []
    n_active = 0
    face_neighbors = np.array(
        [[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]], dtype=np.int64
    )

    while len(frontier):
        fresh = np.asarray([k for k in frontier.tolist() if k not in tested], dtype=np.int64)
        tested.update(fresh.tolist())
        if len(fresh) == 0:
            break
        coords = _unpack(fresh)
        corner_keys = _pack(coords[:, None, :] + _CORNER_OFFSETS[None, :, :])
        vals = cache.fetch(corner_keys)
        ok = np.all(np.isfinite(vals), axis=1) & _sign_change(np.nan_to_num(vals, nan=np.inf))
        if ok.any():
            active_keys.append(fresh[ok])
            active_coords.append(coords[ok])
            active_vals.append(vals[ok])
            n_active += int(ok.sum())
            if n_active > max_active:
                raise ActiveSetOverflow(width, width * (n_active / max_active) ** 0.5 * 2.0)
            nxt = coords[ok][:, None, :] + face_neighbors[None, :, :]
            frontier = np.unique(_pack(nxt.reshape(-1, 3)))
        else:
            frontier = np.empty(0, dtype=np.int64)

    if n_active == 0:
        return VoxelGrid(width, origin, np.empty((0, 3), np.int64), np.empty((0, 8)))
    return VoxelGrid(
        width,
        origin,
        np.concatenate(active_coords),
        np.concatenate(active_vals),
    )


def edge_root(field, a, b, tol) -> EdgeIntersection:
    """Bisection root on segment [a, b]; endpoints must have opposite signs."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    va = field.values(a[None])[0]
    vb = field.values(b[None])[0]
    if not (np.isfinite(va) and np.isfinite(vb)) or (va < 0) == (vb < 0):
        raise ValueError("endpoints must be defined with opposite signs")
    if va >= 0:
        a, b, va, vb = b, a, vb, va
    mid, vm = a, va
    for _ in range(BISECTION_ITERS):
        mid = 0.5 * (a + b)
        vm = field.values(mid[None])[0]
        if np.isfinite(vm) and abs(vm) <= tol:
            break
        if np.isfinite(vm) and vm < 0:
            a = mid
        else:
            b = mid
    _, grads, _ = field.evaluate(mid[None], want_gradient=True)
    g = grads[0]
    norm = np.linalg.norm(g)
    if not np.isfinite(norm) or norm < 1e-12:
        edge_dir = b - a
        edge_dir = edge_dir / max(np.linalg.norm(edge_dir), 1e-300)
        g, norm = edge_dir, 1.0  # f increases from the negative toward b
    return EdgeIntersection(position=mid, normal=g / norm)


def _batch_edge_roots(field, p_neg, p_pos, tol, workers=1):
    """Vectorized bisection; p_neg holds the negative-sign endpoints."""
    model = getattr(field, "model", None)
    if model is not None:
        mid, grads = axis_edge_roots(
            model, p_neg, p_pos, tol, iters=BISECTION_ITERS, workers=workers
        )
    else:
        a = p_neg.copy()
        b = p_pos.copy()
        mid = 0.5 * (a + b)
        active = np.ones(len(a), dtype=bool)
        for _ in range(BISECTION_ITERS):
            if not active.any():
                break
            mid = np.where(active[:, None], 0.5 * (a + b), mid)
            vm = field.values(mid)
            neg = np.isfinite(vm) & (vm < 0)
            # undefined midpoints (rare near support boundaries) shrink from
            # the positive side, same as a non-negative sample
            a = np.where((active & neg)[:, None], mid, a)
            b = np.where((active & ~neg)[:, None], mid, b)
            active &= ~(np.isfinite(vm) & (np.abs(vm) <= tol))
        _, grads, _ = field.evaluate(mid, want_gradient=True)
    norms = np.linalg.norm(grads, axis=1)
    bad = ~np.isfinite(norms) | (norms < 1e-12)
    if bad.any():
        edge_dir = p_pos[bad] - p_neg[bad]
        edge_dir /= np.maximum(np.linalg.norm(edge_dir, axis=1, keepdims=True), 1e-300)
        grads[bad] = edge_dir
        norms[bad] = 1.0
    return mid, grads / norms[:, None]


def place_vertex(positions, normals, box=None, reg=QEF_REG):
    """Minimize sum((v - q_j) . n_j)^2, pulled toward the intersection centroid.

    The Tikhonov term reg * count keeps rank-deficient configurations (planes,
    single intersections) well posed; the result is clamped to ``box``.
    """
    q = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    n = np.asarray(normals, dtype=np.float64).reshape(-1, 3)
    if len(q) == 0:
        raise ValueError("need at least one intersection")
    lam = reg * len(q)
    m = n.T @ n + lam * np.eye(3)
    centroid = q.mean(axis=0)
    rhs = n.T @ np.einsum("ij,ij->i", n, q) + lam * centroid
    v = np.linalg.solve(m, rhs)
    if box is not None:
        lo, hi = box
        v = np.clip(v, lo, hi)
    return v


def contour(field, grid: VoxelGrid, tol_factor=1e-4, workers=1) -> QuadMesh:
    """Vertices from QEF minimization plus one quad per interior isosurface edge."""
    w = grid.width
    if grid.n_active == 0:
        return QuadMesh(np.empty((0, 3)), np.empty((0, 4), np.int64))
    coords = grid.coords
    vals = grid.corner_values
    m_vox = len(coords)

    # unique sign-change edges; key packs the lower corner and the axis
    vox_rows, edge_keys, p_lo_list, v_lo_list, v_hi_list, axes = [], [], [], [], [], []
    corner_coords = coords[:, None, :] + _CORNER_OFFSETS[None, :, :]
    for ca, cb, axis in _EDGES:
        va = vals[:, ca]
        vb = vals[:, cb]
        hit = (va < 0) != (vb < 0)
        if not hit.any():
            continue
        rows = np.flatnonzero(hit)
        lo = corner_coords[rows, ca]
        edge_keys.append(_pack(lo) * 4 + axis)
        vox_rows.append(rows)
        p_lo_list.append(lo)
        v_lo_list.append(va[rows])
        v_hi_list.append(vb[rows])
        axes.append(np.full(len(rows), axis, dtype=np.int64))

    if not edge_keys:
        return QuadMesh(np.empty((0, 3)), np.empty((0, 4), np.int64))
    edge_keys = np.concatenate(edge_keys)
    vox_rows = np.concatenate(vox_rows)
    p_lo = np.concatenate(p_lo_list)
    v_lo = np.concatenate(v_lo_list)
    v_hi = np.concatenate(v_hi_list)
    axes = np.concatenate(axes)

    uniq_keys, first, inverse = np.unique(edge_keys, return_index=True, return_inverse=True)
    u_lo = p_lo[first]
    u_axis = axes[first]
    u_vlo = v_lo[first]
    u_vhi = v_hi[first]
    a_pos = grid.corner_position(u_lo)
    b_pos = a_pos.copy()
    b_pos[np.arange(len(u_axis)), u_axis] += w

    p_neg = np.where((u_vlo < 0)[:, None], a_pos, b_pos)
    p_pos = np.where((u_vlo < 0)[:, None], b_pos, a_pos)
    roots, root_normals = _batch_edge_roots(field, p_neg, p_pos, tol_factor * w, workers)

    # QEF accumulation per voxel over (voxel, unique edge) incidences
    ne = len(uniq_keys)
    q = roots[inverse]
    nrm = root_normals[inverse]
    counts = np.bincount(vox_rows, minlength=m_vox).astype(np.float64)
    mats = np.zeros((m_vox, 3, 3))
    rhs = np.zeros((m_vox, 3))
    cent = np.zeros((m_vox, 3))
    ndq = np.einsum("ij,ij->i", nrm, q)
    for a in range(3):
        cent[:, a] = np.bincount(vox_rows, weights=q[:, a], minlength=m_vox)
        rhs[:, a] = np.bincount(vox_rows, weights=nrm[:, a] * ndq, minlength=m_vox)
        for b in range(3):
            mats[:, a, b] = np.bincount(
                vox_rows, weights=nrm[:, a] * nrm[:, b], minlength=m_vox
            )
    safe = np.maximum(counts, 1.0)
    cent /= safe[:, None]
    lam = QEF_REG * safe
    mats += lam[:, None, None] * np.eye(3)
    rhs += lam[:, None] * cent
    verts = np.linalg.solve(mats, rhs[:, :, None])[:, :, 0]
    box_lo = grid.corner_position(coords)
    verts = np.clip(verts, box_lo, box_lo + w)
    # averaged intersection normals give usable vertex normals for output
    vnorm = np.zeros((m_vox, 3))
    for a in range(3):
        vnorm[:, a] = np.bincount(vox_rows, weights=nrm[:, a], minlength=m_vox)
    lens = np.linalg.norm(vnorm, axis=1)
    vnorm[lens > 0] /= lens[lens > 0, None]

    # quads: all four voxels around an interior edge must be active
    pk = _pack(coords)
    sort_order = np.argsort(pk)
    sorted_keys = pk[sort_order]

    def lookup(keys):
        pos = np.clip(np.searchsorted(sorted_keys, keys), 0, len(sorted_keys) - 1)
        found = sorted_keys[pos] == keys
        return np.where(found, sort_order[pos], -1)

    faces = []
    for axis in (0, 1, 2):
        sel = u_axis == axis
        if not sel.any():
            continue
        lo = u_lo[sel]
        increasing = u_vhi[sel] > u_vlo[sel]  # field grows along +axis
        u, v = _UV[axis]
        ring = np.zeros((4, 3), dtype=np.int64)
        ring[:, u] = _RING[:, 0]
        ring[:, v] = _RING[:, 1]
        quad_rows = lookup(_pack(lo[:, None, :] + ring[None, :, :]))
        complete = np.all(quad_rows >= 0, axis=1)  # else open boundary
        quad_rows = quad_rows[complete]
        flip = ~increasing[complete]
        quad_rows[flip] = quad_rows[flip, ::-1]
        faces.append(quad_rows)

    faces = np.concatenate(faces, axis=0) if faces else np.empty((0, 4), np.int64)
    return QuadMesh(verts, faces, vertex_normals=vnorm)


def emit_quads(grid: VoxelGrid, vertices, vertex_normals=None) -> QuadMesh:
    """Quads from precomputed voxel vertices (one per active voxel)."""
    vertices = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
    if len(vertices) != grid.n_active:
        raise ValueError("one vertex per active voxel required")
    vox_index = {k: i for i, k in enumerate(_pack(grid.coords).tolist())}
    corner_coords = grid.coords[:, None, :] + _CORNER_OFFSETS[None, :, :]
    seen = set()
    faces = []
    for ca, cb, axis in _EDGES:
        va = grid.corner_values[:, ca]
        vb = grid.corner_values[:, cb]
        hit = np.flatnonzero((va < 0) != (vb < 0))
        for row in hit:
            lo = corner_coords[row, ca]
            key = int(_pack(lo)) * 4 + int(axis)
            if key in seen:
                continue
            seen.add(key)
            u, v = _UV[axis]
            quad = []
            for du, dv in _RING:
                c = lo.copy()
                c[u] += du
                c[v] += dv
                quad.append(vox_index.get(int(_pack(c))))
            if any(qv is None for qv in quad):
                continue
            if not (vb[row] > va[row]):
                quad = quad[::-1]
            faces.append(quad)
    faces = np.asarray(faces, dtype=np.int64).reshape(-1, 4)
    return QuadMesh(vertices, faces, vertex_normals)


def extract_surface(
    field,
    centers,
    normals,
    width,
    seed_steps=3,
    max_active=DEFAULT_MAX_ACTIVE,
    workers=1,
) -> QuadMesh:
    grid = collect_active_voxels(field, centers, normals, width, seed_steps, max_active, workers)
    return contour(field, grid, workers=workers)


def _face_edges(faces):
    k = faces.shape[1]
    pairs = []
    for a in range(k):
        b = (a + 1) % k
        e = np.stack([faces[:, a], faces[:, b]], axis=1)
        pairs.append(np.sort(e, axis=1))
    return np.concatenate(pairs, axis=0)  # (k * nf, 2), face index = row % nf


def boundary_edge_count(mesh: QuadMesh):
    """Edges used by exactly one face (zero on a closed mesh)."""
    if mesh.n_faces == 0:
        return 0
    edges = _face_edges(mesh.faces)
    _, counts = np.unique(edges, axis=0, return_counts=True)
    return int(np.count_nonzero(counts == 1))


def face_components(mesh: QuadMesh):
    """Connected-component label per face, linking faces that share an edge."""
    nf = mesh.n_faces
    if nf == 0:
        return np.empty(0, dtype=np.int64)
    edges = _face_edges(mesh.faces)
    face_ids = np.tile(np.arange(nf), mesh.faces.shape[1])
    order = np.lexsort((edges[:, 1], edges[:, 0]))
    edges, face_ids = edges[order], face_ids[order]
    same = np.all(edges[1:] == edges[:-1], axis=1)
    src = face_ids[:-1][same]
    dst = face_ids[1:][same]
    graph = sp.coo_matrix((np.ones(len(src)), (src, dst)), shape=(nf, nf))
    _, labels = connected_components(graph, directed=False)
    return labels


def remove_small_fragments(mesh: QuadMesh, min_faces) -> QuadMesh:
    """Drop connected components with fewer than min_faces faces.

    The largest component is always kept, even if below the cutoff.
    """
    if mesh.n_faces == 0:
        return mesh
    labels = face_components(mesh)
    sizes = np.bincount(labels)
    keep_labels = np.flatnonzero(sizes >= min_faces)
    if len(keep_labels) == 0:
        keep_labels = np.array([int(np.argmax(sizes))])
    keep = np.isin(labels, keep_labels)
    faces = mesh.faces[keep]
    used = np.unique(faces)
    remap = -np.ones(mesh.n_vertices, dtype=np.int64)
    remap[used] = np.arange(len(used))
    vn = mesh.vertex_normals[used] if mesh.vertex_normals is not None else None
    return QuadMesh(mesh.vertices[used], remap[faces], vn)
