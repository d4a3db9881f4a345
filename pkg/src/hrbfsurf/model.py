"""Closed-form HRBF quasi-interpolation: support tuning, coefficients, evaluation.

The implicit value at x is f(x) = -sum_j <b_j, grad phi_j(x)> with
b_j = rho_j^2 n_j / (20 + eta rho_j^2), summed over kernels whose open
support contains x.  Outside every support the function is undefined.
"""

from __future__ import annotations

import multiprocessing
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from . import kernel
from .octree import PointOctree, strict_counts

RHO_HARD_CAP = 4.0  # < sqrt(20); reachable only on pathologically sparse input
GROWTH_FACTOR = 1.05
ETA_MARGIN = 1e-5
_EVAL_CHUNK = 16384  # fixed so chunking (hence output) is worker-count independent


@dataclass
class TuningParams:
    s: float
    d_bar: float
    m: int
    rho: np.ndarray  # (n,) per-center support radii
    rho_min: float
    rho_max: float
    eta: float
    uniform_support: bool
    # counts with radii one growth step larger; kept for diagnostics because
    # the enlargement stops one increment before exceeding m
    overshoot_counts: np.ndarray | None = None

    @property
    def a_bar(self):
        return self.m * (5.0 / (4.0 * self.rho_min) + 35.0 / self.rho_min**2)

    def check(self):
        if not (self.rho_max < np.sqrt(20.0)):
            raise ValueError("rho_max must stay below sqrt(20); model not normalized?")
        threshold = self.m * (5.0 / (4.0 * self.rho_min) + 35.0 / self.rho_min**2) - 1.0
        if not (self.eta > threshold):
            raise ValueError("eta below the regularization threshold")


class RadiusBands:
    """kd-trees over centers grouped by support radius (factor-2 bands).

    A single kd-tree forces every candidate search to use the largest support
    radius in the model; with mixed densities such a query returns nearly all
    centers.  Querying each band at its own radius keeps small-support
    centers tightly pruned while the few oversized supports stay cheap.
    """

    def __init__(self, centers, rho):
        rho = np.asarray(rho, dtype=np.float64)
        level = np.floor(np.log2(rho / rho.min()) + 1e-12).astype(np.int64)
        self.groups = []
        for k in np.unique(level):
            idx = np.flatnonzero(level == k)  # ascending center indices
            self.groups.append(
                {
                    "idx": idx,
                    "tree": cKDTree(centers[idx]),
                    "rmax": float(rho[idx].max()),
                    "k_hint": _K_START,
                }
            )


@dataclass
class HrbfModel:
    centers: np.ndarray  # (n, 3)
    normals: np.ndarray  # (n, 3) unit
    rho: np.ndarray  # (n,)
    eta: float
    b_coeffs: np.ndarray  # (n, 3)
    rho_max: float
    tree: cKDTree = field(repr=False, default=None)
    bands: RadiusBands = field(repr=False, default=None)

    @property
    def n_centers(self):
        return len(self.centers)


@dataclass
class BoundReport:
    a_bar: float
    contraction: float  # A_bar / (1 + eta), estimate of ||D^-1||inf ||dA||inf
    bound_value: float
    measured_inf_error: float
    applicable: bool
    holds: bool


def tune_parameters(
    ps,
    idx: PointOctree,
    s=1.0,
    noisy_mode=False,
    eta_override=None,
    workers=1,
) -> TuningParams:
    """Choose per-center support radii, the cover cap m, and eta.

    Base length d_bar is 3/4 of the mean octree leaf diagonal; temporary
    radii s * d_bar define m as the maximal number of points strictly inside
    any support.  Each radius then grows by 5% increments while its support
    holds <= m points; the step that would exceed m is rolled back.
    """
    points = np.asarray(getattr(ps, "points", ps), dtype=np.float64)
    n = len(points)
    if n < 2:
        raise ValueError("need at least 2 points to tune supports")
    if s < 1.0:
        raise ValueError("amplifier s must be >= 1")

    d_bar = 0.75 * idx.mean_leaf_diagonal
    rho0 = s * d_bar
    counts = strict_counts(idx, points, np.full(n, rho0), workers=workers)
    m = int(counts.max())

    rho = np.full(n, rho0)
    overshoot = counts.astype(np.int64).copy()
    active = np.ones(n, dtype=bool)
    # 1.05^420 * rho0 overflows any sane cap; the loop exits on the cap first.
    for _ in range(420):
        if not active.any():
            break
        trial = rho[active] * GROWTH_FACTOR
        trial = np.minimum(trial, RHO_HARD_CAP)
        cnt = strict_counts(idx, points[active], trial, workers=workers)
        over = cnt > m
        capped = trial >= RHO_HARD_CAP
        ai = np.flatnonzero(active)
        overshoot[ai[over]] = cnt[over]
        grow = ~over
        rho[ai[grow]] = trial[grow]
        active[ai[over | (capped & grow)]] = False

    if noisy_mode:
        rho = np.full(n, rho.min())

    rho_min = float(rho.min())
    rho_max = float(rho.max())
    threshold = m * (5.0 / (4.0 * rho_min) + 35.0 / rho_min**2) - 1.0
    eta = float(eta_override) if eta_override is not None else threshold + ETA_MARGIN

    tp = TuningParams(
        s=s,
        d_bar=d_bar,
        m=m,
        rho=rho,
        rho_min=rho_min,
        rho_max=rho_max,
        eta=eta,
        uniform_support=noisy_mode,
        overshoot_counts=overshoot,
    )
    if eta_override is None:
        tp.check()
    elif not (tp.rho_max < np.sqrt(20.0)):
        raise ValueError("rho_max must stay below sqrt(20); model not normalized?")
    return tp


def quasi_coefficients(normals, rho, eta):
    """b_j = rho_j^2 n_j / (20 + eta rho_j^2); the scalar coefficients are 0."""
    rho = np.asarray(rho, dtype=np.float64)
    w = rho**2 / (20.0 + eta * rho**2)
    return w[:, None] * np.asarray(normals, dtype=np.float64)


def build_model(ps, tp: TuningParams) -> HrbfModel:
    points = np.asarray(ps.points, dtype=np.float64)
    normals = np.asarray(ps.normals, dtype=np.float64)
    b = quasi_coefficients(normals, tp.rho, tp.eta)
    return HrbfModel(
        centers=points,
        normals=normals,
        rho=np.asarray(tp.rho, dtype=np.float64),
        eta=tp.eta,
        b_coeffs=b,
        rho_max=float(np.max(tp.rho)),
        tree=cKDTree(points),
        bands=RadiusBands(points, tp.rho),
    )


def model_from_arrays(centers, normals, rho, eta) -> HrbfModel:
    """Build a model directly from arrays (used by tests and the exact oracle)."""
    centers = np.asarray(centers, dtype=np.float64).reshape(-1, 3)
    normals = np.asarray(normals, dtype=np.float64).reshape(-1, 3)
    rho = np.broadcast_to(np.asarray(rho, dtype=np.float64), (len(centers),)).copy()
    return HrbfModel(
        centers=centers,
        normals=normals,
        rho=rho,
        eta=float(eta),
        b_coeffs=quasi_coefficients(normals, rho, eta),
        rho_max=float(rho.max()),
        tree=cKDTree(centers),
        bands=RadiusBands(centers, rho),
    )


_K_START = 48


def _band_pairs(group, x, slack, workers):
    """Pairs against one radius band; fixed-width queries with k-doubling."""
    n = len(group["idx"])
    upper = group["rmax"] + slack
    kq = min(n, max(2, group["k_hint"]))
    while True:
        dist, idx = group["tree"].query(x, k=kq, distance_upper_bound=upper, workers=workers)
        if kq == 1:
            dist, idx = dist[:, None], idx[:, None]
        if kq >= n or not np.any(np.isfinite(dist[:, -1])):
            break
        kq = min(n, kq * 2)
    hit = np.isfinite(dist)
    counts = hit.sum(axis=1)
    group["k_hint"] = min(n, int(counts.max(initial=1)) + 8)
    cidx = group["idx"][idx[hit]]
    qidx = np.repeat(np.arange(len(x)), counts)
    return qidx, cidx


def _candidate_pairs(model: HrbfModel, x, slack=0.0, workers=1):
    """(query, center) index pairs with distance <= rho_band + slack.

    Bands are queried separately so the search radius tracks the local
    support size; the merged pairs are sorted by (query, center), which
    fixes a deterministic ascending-center accumulation order per query.
    """
    parts = [_band_pairs(g, x, slack, workers) for g in model.bands.groups]
    qidx = np.concatenate([p[0] for p in parts])
    cidx = np.concatenate([p[1] for p in parts])
    order = np.lexsort((cidx, qidx))
    return qidx[order], cidx[order]


def _gather_pairs(model: HrbfModel, x, workers=1):
    """(query, center) pairs with the query strictly inside the center's support."""
    x = np.asarray(x, dtype=np.float64).reshape(-1, 3)
    qidx, cidx = _candidate_pairs(model, x, 0.0, workers)
    if len(qidx):
        offs = x[qidx] - model.centers[cidx]
        d2 = np.einsum("ij,ij->i", offs, offs)
        keep = d2 < model.rho[cidx] ** 2
        qidx, cidx = qidx[keep], cidx[keep]
    return x, qidx, cidx


class FrozenPairs:
    """Candidate pairs gathered once for queries that move less than ``slack``.

    Used by the isosurface bisection: all midpoints of an edge stay within
    half a voxel width of the edge midpoint, so one widened query per edge
    covers every iteration without touching the kd-tree again.
    """

    def __init__(self, model: HrbfModel, anchors, slack, workers=1):
        self.model = model
        anchors = np.asarray(anchors, dtype=np.float64).reshape(-1, 3)
        self.nq = len(anchors)
        self.qidx, self.cidx = _candidate_pairs(model, anchors, slack, workers)

    def evaluate(self, x, want_gradient=False, active=None):
        """Values at x (row-aligned with the anchors); inactive rows get nan."""
        model = self.model
        x = np.asarray(x, dtype=np.float64).reshape(-1, 3)
        qidx, cidx = self.qidx, self.cidx
        if active is not None:
            sel = active[qidx]
            qidx, cidx = qidx[sel], cidx[sel]
        offs = x[qidx] - model.centers[cidx]
        d2 = np.einsum("ij,ij->i", offs, offs)
        keep = d2 < model.rho[cidx] ** 2
        qidx, cidx, offs = qidx[keep], cidx[keep], offs[keep]
        rho = model.rho[cidx]
        b = model.b_coeffs[cidx]
        g = kernel.gradient(offs, rho)
        values = -np.bincount(qidx, weights=np.einsum("ij,ij->i", b, g), minlength=self.nq)
        covered = np.bincount(qidx, minlength=self.nq)
        values[covered == 0] = np.nan
        if active is not None:
            values[~active] = np.nan
        if not want_gradient:
            return values
        grads = np.empty((self.nq, 3))
        hb = np.einsum("ijk,ik->ij", kernel.hessian(offs, rho), b)
        for a in range(3):
            grads[:, a] = -np.bincount(qidx, weights=hb[:, a], minlength=self.nq)
        grads[covered == 0] = np.nan
        return values, grads


_EDGE_CHUNK = 32768  # bounds the per-pair scratch arrays


def axis_edge_roots(model: HrbfModel, p_neg, p_pos, tol, iters=32, workers=1):
    """Bisection roots on short segments; p_neg holds the negative endpoints.

    Candidates are gathered once per segment (every midpoint stays on it), and
    the iteration reduces to scalar work per (segment, kernel) pair: with
    u = p_neg - c and g = p_pos - p_neg, the squared distance along the segment
    is |u|^2 + 2<u,g>s + |g|^2 s^2 and <b, x-c> is <b,u> + <b,g>s, so each
    midpoint costs one sqrt per pair instead of a fresh neighbor search.

    Returns (roots, gradients); gradients are nan where no support covers the
    root (callers substitute the segment direction).
    """
    p_neg = np.asarray(p_neg, dtype=np.float64).reshape(-1, 3)
    p_pos = np.asarray(p_pos, dtype=np.float64).reshape(-1, 3)
    n = len(p_neg)
    if n == 0:
        return np.empty((0, 3)), np.empty((0, 3))
    roots = np.empty((n, 3))
    grads = np.empty((n, 3))
    slices = [slice(i0, min(i0 + _EDGE_CHUNK, n)) for i0 in range(0, n, _EDGE_CHUNK)]
    if workers <= 1 or len(slices) == 1:
        for sl in slices:
            roots[sl], grads[sl] = _edge_roots_chunk(model, p_neg[sl], p_pos[sl], tol, iters)
        return roots, grads

    # chunks are independent, so slice-wise writes from threads never race and
    # the result does not depend on completion order
    from concurrent.futures import ThreadPoolExecutor

    def run(sl):
        roots[sl], grads[sl] = _edge_roots_chunk(model, p_neg[sl], p_pos[sl], tol, iters)

    with ThreadPoolExecutor(max_workers=workers) as pool:
        for job in [pool.submit(run, sl) for sl in slices]:
            job.result()
    return roots, grads


def _edge_roots_chunk(model, p_neg, p_pos, tol, iters):
    n = len(p_neg)
    seg = p_pos - p_neg
    half = 0.5 * float(np.sqrt(np.einsum("ij,ij->i", seg, seg).max()))
    qidx, cidx = _candidate_pairs(model, 0.5 * (p_neg + p_pos), half + 1e-9)
    u = p_neg[qidx] - model.centers[cidx]
    g = seg[qidx]
    aa = np.einsum("ij,ij->i", u, u)
    bb = np.einsum("ij,ij->i", u, g)
    gg = np.maximum(np.einsum("ij,ij->i", g, g), 1e-300)
    # drop pairs whose support misses the whole segment: the minimum of the
    # distance quadratic over s in [0, 1] already exceeds rho
    s_close = np.clip(-bb / gg, 0.0, 1.0)
    d2_min = aa + (2.0 * bb + gg * s_close) * s_close
    near = d2_min < model.rho[cidx] ** 2
    qidx, cidx, u, g = qidx[near], cidx[near], u[near], g[near]
    aa, bb, gg = aa[near], bb[near], gg[near]
    b = model.b_coeffs[cidx]
    cc = np.einsum("ij,ij->i", b, u)
    dd = np.einsum("ij,ij->i", b, g)
    rho = model.rho[cidx]
    scale = 20.0 / rho**2

    lo = np.zeros(n)
    hi = np.ones(n)
    s_mid = np.full(n, 0.5)
    active = np.ones(n, dtype=bool)
    for _ in range(iters):
        if not active.any():
            break
        s_mid = np.where(active, 0.5 * (lo + hi), s_mid)
        sel = active[qidx]
        qs, s = qidx[sel], s_mid[qidx[sel]]
        t = np.sqrt(aa[sel] + (2.0 * bb[sel] + gg[sel] * s) * s) / rho[sel]
        inside = t < 1.0
        contrib = scale[sel] * np.where(inside, (1.0 - t) ** 3, 0.0) * (cc[sel] + dd[sel] * s)
        vm = np.bincount(qs, weights=contrib, minlength=n)
        cov = np.bincount(qs[inside], minlength=n)
        vm[cov == 0] = np.nan
        neg = np.isfinite(vm) & (vm < 0.0)
        # undefined midpoints (rare near support boundaries) shrink from the
        # positive side, same as a non-negative sample
        lo = np.where(active & neg, s_mid, lo)
        hi = np.where(active & ~neg, s_mid, hi)
        active &= ~(np.isfinite(vm) & (np.abs(vm) <= tol))
    roots = p_neg + s_mid[:, None] * seg

    # gradient of the field at the roots from the same pair set:
    # sum scale * ((1-t)^3 b - 3 (1-t)^2 <b, x-c> (x-c) / (rho r))
    s = s_mid[qidx]
    r = np.sqrt(aa + (2.0 * bb + gg * s) * s)
    t = r / rho
    inside = t < 1.0
    w2 = np.where(inside, (1.0 - t) ** 2, 0.0)
    radial = scale * 3.0 * w2 * (cc + dd * s) / (rho * np.maximum(r, 1e-300))
    tang = scale * w2 * np.where(inside, 1.0 - t, 0.0)
    xc = u + s[:, None] * g
    grads = np.empty((n, 3))
    for a in range(3):
        grads[:, a] = np.bincount(
            qidx, weights=tang * b[:, a] - radial * xc[:, a], minlength=n
        )
    covered = np.bincount(qidx[inside], minlength=n)
    grads[covered == 0] = np.nan
    return roots, grads


_LATTICE_CELL_CAP = 80_000_000
_NARROW_BOX = 4096  # cells; below this a per-kernel loop is all overhead
_NARROW_CHUNK_ROWS = 2_000_000


class LatticeTable:
    """Field values at every lattice corner covered by some kernel support.

    Instead of querying neighbors per corner, each kernel is splatted onto the
    lattice cells inside its support.  Both the squared distance and <b, x-c>
    decompose along the axes, so the per-kernel box is assembled from three
    small 1-d arrays by broadcasting.

    Two strategies share the same accumulation order (so their use never
    depends on the worker count): wide supports get a per-kernel loop whose
    parallel form partitions the lattice into x-slabs with disjoint cell
    ownership, narrow supports get fixed-size chunks of kernels (sorted along
    x for cell locality) whose dense partial sums are applied in chunk order.
    Either way each cell accumulates its kernels in the same fixed order, so
    output is bitwise identical for any number of workers.  Cells outside
    every support hold nan.
    """

    def __init__(self, model: HrbfModel, origin, width, cell_cap=_LATTICE_CELL_CAP, workers=1):
        origin = np.asarray(origin, dtype=np.float64)
        centers, rho, b = model.centers, model.rho, model.b_coeffs
        lo = np.ceil((centers - rho[:, None] - origin) / width).astype(np.int64)
        hi = np.floor((centers + rho[:, None] - origin) / width).astype(np.int64)
        gmin = lo.min(axis=0)
        gmax = hi.max(axis=0)
        shape = gmax - gmin + 1
        ncells = int(shape[0]) * int(shape[1]) * int(shape[2])
        if ncells > cell_cap:
            raise MemoryError(f"lattice of {ncells} cells exceeds the cap {cell_cap}")
        self.gmin = gmin
        self.shape = shape
        self._origin = origin
        self._width = width
        self._centers = centers
        self._rho = rho
        self._b = b
        self._lo = lo - gmin  # cell coordinates relative to the table
        self._hi = hi - gmin
        vals = np.zeros(ncells)
        cov = np.zeros(ncells, dtype=np.int64)
        ext = hi - lo + 1
        if int(np.median(np.prod(ext, axis=1))) <= _NARROW_BOX:
            self._splat_narrow(vals, cov, workers)
        else:
            self._splat_wide(vals, cov, workers)
        vals[cov == 0] = np.nan
        self.values_flat = vals

    def _cell_offsets(self, j, x_lo, x_hi):
        """Per-axis offset vectors from kernel j to cell positions; x clipped."""
        o, w, c = self._origin, self._width, self._centers[j]
        g = self.gmin
        dx = o[0] + (g[0] + np.arange(x_lo, x_hi + 1)) * w - c[0]
        dy = o[1] + (g[1] + np.arange(self._lo[j, 1], self._hi[j, 1] + 1)) * w - c[1]
        dz = o[2] + (g[2] + np.arange(self._lo[j, 2], self._hi[j, 2] + 1)) * w - c[2]
        return dx, dy, dz

    def _kernel_cells(self, j, x_lo, x_hi):
        """(flat cell indices, contributions) of kernel j within an x range."""
        dx, dy, dz = self._cell_offsets(j, x_lo, x_hi)
        d2 = (dx**2)[:, None, None] + (dy**2)[None, :, None] + (dz**2)[None, None, :]
        mask = d2 < self._rho[j] ** 2
        if not mask.any():
            return None, None
        bj = self._b[j]
        bdot = (
            (bj[0] * dx)[:, None, None]
            + (bj[1] * dy)[None, :, None]
            + (bj[2] * dz)[None, None, :]
        )
        t = np.sqrt(d2[mask]) / self._rho[j]
        contrib = (20.0 / self._rho[j] ** 2) * (1.0 - t) ** 3 * bdot[mask]
        sy, sz = int(self.shape[1]), int(self.shape[2])
        ii = np.arange(x_lo, x_hi + 1)
        jj = np.arange(self._lo[j, 1], self._hi[j, 1] + 1)
        kk = np.arange(self._lo[j, 2], self._hi[j, 2] + 1)
        flat = (
            (ii[:, None, None] * sy + jj[None, :, None]) * sz + kk[None, None, :]
        )[mask]
        return flat, contrib

    def _splat_wide(self, vals, cov, workers):
        n = len(self._centers)

        def run_slab(x_lo, x_hi):
            # cells in [x_lo, x_hi] belong to this slab only: no write races,
            # and each cell still sees its kernels in ascending index order
            for j in range(n):
                xa = max(int(self._lo[j, 0]), x_lo)
                xb = min(int(self._hi[j, 0]), x_hi)
                if xa > xb:
                    continue
                layer = int(
                    (self._hi[j, 1] - self._lo[j, 1] + 1)
                    * (self._hi[j, 2] - self._lo[j, 2] + 1)
                )
                # oversized supports go in x-bands to bound the scratch arrays
                step = max(1, _NARROW_CHUNK_ROWS // max(layer, 1))
                for x0 in range(xa, xb + 1, step):
                    flat, contrib = self._kernel_cells(j, x0, min(x0 + step - 1, xb))
                    if flat is None:
                        continue
                    vals[flat] += contrib
                    cov[flat] += 1

        nx = int(self.shape[0])
        if workers <= 1 or nx < 2 * workers:
            run_slab(0, nx - 1)
            return
        from concurrent.futures import ThreadPoolExecutor

        bounds = np.linspace(0, nx, workers + 1).astype(int)
        with ThreadPoolExecutor(max_workers=workers) as pool:
            jobs = [
                pool.submit(run_slab, int(bounds[s]), int(bounds[s + 1]) - 1)
                for s in range(workers)
                if bounds[s] < bounds[s + 1]
            ]
            for job in jobs:
                job.result()

    def _splat_narrow(self, vals, cov, workers):
        n = len(self._centers)
        # x-sorted order gives chunks a narrow flat range; the order and the
        # chunk boundaries are fixed so partial-sum bracketing never varies
        order = np.lexsort((np.arange(n), self._lo[:, 2], self._lo[:, 1], self._lo[:, 0]))
        per = int(np.prod(self._hi - self._lo + 1, axis=1).max())
        chunk = max(1, _NARROW_CHUNK_ROWS // max(per, 1))
        chunks = [order[i0 : i0 + chunk] for i0 in range(0, n, chunk)]
        sy, sz = int(self.shape[1]), int(self.shape[2])

        def run_chunk(members):
            lo = self._lo[members]
            hi = self._hi[members]
            base = int(lo[:, 0].min()) * sy * sz
            span = (int(hi[:, 0].max()) + 1) * sy * sz - base
            ext = (hi - lo).max(axis=0) + 1
            # cell coordinates per axis, one row per kernel in the chunk
            cc = [lo[:, a, None] + np.arange(ext[a]) for a in range(3)]
            off = [
                self._origin[a]
                + (self.gmin[a] + cc[a]) * self._width
                - self._centers[members][:, a, None]
                for a in range(3)
            ]
            d2 = (
                (off[0] ** 2)[:, :, None, None]
                + (off[1] ** 2)[:, None, :, None]
                + (off[2] ** 2)[:, None, None, :]
            )
            keep = (
                (d2 < (self._rho[members] ** 2)[:, None, None, None])
                & (cc[0] <= hi[:, 0, None])[:, :, None, None]
                & (cc[1] <= hi[:, 1, None])[:, None, :, None]
                & (cc[2] <= hi[:, 2, None])[:, None, None, :]
            )
            if not keep.any():
                return base, np.zeros(span), np.zeros(span, np.int64)
            bm = self._b[members]
            bdot = (
                (bm[:, 0, None] * off[0])[:, :, None, None]
                + (bm[:, 1, None] * off[1])[:, None, :, None]
                + (bm[:, 2, None] * off[2])[:, None, None, :]
            )
            flat = (
                (cc[0][:, :, None, None] * sy + cc[1][:, None, :, None]) * sz
                + cc[2][:, None, None, :]
            )
            rows = np.broadcast_to(
                np.arange(len(members))[:, None, None, None], keep.shape
            )[keep]
            t = np.sqrt(d2[keep]) / self._rho[members][rows]
            contrib = (
                (20.0 / self._rho[members][rows] ** 2) * (1.0 - t) ** 3 * bdot[keep]
            )
            idx = np.broadcast_to(flat, keep.shape)[keep] - base
            pv = np.bincount(idx, weights=contrib, minlength=span)
            pc = np.bincount(idx, minlength=span)
            return base, pv, pc

        def apply(result):
            base, pv, pc = result
            vals[base : base + len(pv)] += pv
            cov[base : base + len(pc)] += pc

        if workers <= 1 or len(chunks) == 1:
            for members in chunks:
                apply(run_chunk(members))
            return
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as pool:
            # results are applied in chunk order regardless of completion order
            for result in pool.map(run_chunk, chunks):
                apply(result)

    def fetch(self, coords):
        """Values at integer lattice coords of any shape (..., 3)."""
        coords = np.asarray(coords, dtype=np.int64)
        c = coords.reshape(-1, 3) - self.gmin
        inside = np.all((c >= 0) & (c < self.shape), axis=1)
        out = np.full(len(c), np.nan)
        ci = c[inside]
        flat = (ci[:, 0] * int(self.shape[1]) + ci[:, 1]) * int(self.shape[2]) + ci[:, 2]
        out[inside] = self.values_flat[flat]
        return out.reshape(coords.shape[:-1])


def _eval_chunk(model: HrbfModel, x, want_gradient):
    x, qidx, cidx = _gather_pairs(model, x)
    nq = len(x)
    values = np.zeros(nq)
    covered = np.bincount(qidx, minlength=nq)
    grads = np.zeros((nq, 3)) if want_gradient else None
    if len(qidx):
        offsets = x[qidx] - model.centers[cidx]
        rho = model.rho[cidx]
        b = model.b_coeffs[cidx]
        g = kernel.gradient(offsets, rho)
        values = -np.bincount(qidx, weights=np.einsum("ij,ij->i", b, g), minlength=nq)
        if want_gradient:
            hb = np.einsum("ijk,ik->ij", kernel.hessian(offsets, rho), b)
            for a in range(3):
                grads[:, a] = -np.bincount(qidx, weights=hb[:, a], minlength=nq)
    defined = covered > 0
    values[~defined] = np.nan
    if want_gradient:
        grads[~defined] = np.nan
    return values, grads, defined


# Fork-shared state for worker processes; set in the parent before the pool
# is created so children inherit it without pickling the model per task.
_WORKER_MODEL = None


def _worker_eval(args):
    x, want_gradient = args
    return _eval_chunk(_WORKER_MODEL, x, want_gradient)


class ImplicitField:
    """Batched evaluator for the quasi-interpolant, optionally multi-process.

    Chunk boundaries are fixed, and per-query accumulation runs in center
    index order, so results are bitwise identical for any worker count.
    """

    def __init__(self, model: HrbfModel, workers=1):
        self.model = model
        self.workers = max(1, int(workers))
        self._pool = None
        if self.workers > 1:
            global _WORKER_MODEL
            _WORKER_MODEL = model
            ctx = multiprocessing.get_context("fork")
            self._pool = ProcessPoolExecutor(max_workers=self.workers, mp_context=ctx)

    def close(self):
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def evaluate(self, x, want_gradient=False):
        """Values (nan where undefined), optional gradients, defined mask."""
        x = np.asarray(x, dtype=np.float64).reshape(-1, 3)
        if len(x) == 0:
            return np.empty(0), (np.empty((0, 3)) if want_gradient else None), np.empty(0, bool)
        chunks = [x[i : i + _EVAL_CHUNK] for i in range(0, len(x), _EVAL_CHUNK)]
        if self._pool is None or len(chunks) == 1:
            parts = [_eval_chunk(self.model, c, want_gradient) for c in chunks]
        else:
            parts = list(self._pool.map(_worker_eval, [(c, want_gradient) for c in chunks]))
        values = np.concatenate([p[0] for p in parts])
        defined = np.concatenate([p[2] for p in parts])
        grads = np.concatenate([p[1] for p in parts]) if want_gradient else None
        return values, grads, defined

    def values(self, x):
        return self.evaluate(x, want_gradient=False)[0]


def eval_implicit(model: HrbfModel, x, want_gradient=True):
    """Single-point evaluation; returns (value, gradient) or (None, None) when
    no support covers x."""
    v, g, defined = _eval_chunk(model, np.asarray(x, dtype=np.float64).reshape(1, 3), want_gradient)
    if not defined[0]:
        return None, None
    return float(v[0]), (g[0] if want_gradient else None)


def quasi_lambda(model: HrbfModel):
    """The quasi-solution as a flat 4n vector of (a_j, b_j) blocks, a_j = 0."""
    lam = np.zeros((model.n_centers, 4))
    lam[:, 1:] = model.b_coeffs
    return lam.ravel()


def verify_error_bound(model: HrbfModel, tp: TuningParams, exact_result) -> BoundReport:
    """Check the constant error bound of the quasi-solution against an exact solve."""
    a_bar = tp.a_bar
    eta = tp.eta
    contraction = a_bar / (1.0 + eta)
    applicable = contraction < 1.0
    bound = a_bar * tp.rho_max**2 / ((1.0 + eta - a_bar) * (20.0 + eta * tp.rho_max**2)) if applicable else np.inf
    measured = float(np.max(np.abs(quasi_lambda(model) - exact_result.lam)))
    return BoundReport(
        a_bar=a_bar,
        contraction=contraction,
        bound_value=float(bound),
        measured_inf_error=measured,
        applicable=applicable,
        holds=bool(applicable and measured <= bound),
    )
