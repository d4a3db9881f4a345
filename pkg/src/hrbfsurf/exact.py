"""Desk-scale exact HRBF solver used as the oracle for error-bound checks.

Assembles the regularized 4n x 4n block system over compact supports as a
sparse matrix and solves it directly.  Row-block i stacks the value and
gradient constraints at point i; column-block j carries kernel j (support
rho_j).  The diagonal blocks reduce to diag(1, 20/rho^2, ...) + eta I, the
same matrix the quasi-solution inverts in closed form.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.spatial import cKDTree

from . import kernel

DEFAULT_POINT_CAP = 5000


class SolverCapError(ValueError):
    """The exact solver is desk-scale only."""


class IllConditionedError(RuntimeError):
    def __init__(self, message, condition_estimate):
        super().__init__(message)
        self.condition_estimate = condition_estimate


@dataclass
class ExactSystem:
    n: int
    matrix: sp.csr_matrix  # A + eta I, 4n x 4n
    y: np.ndarray  # rhs, blocks (0, n_i)
    eta: float
    rho: np.ndarray
    delta_a_inf: float  # ||A + eta I - D||inf, exact from assembled blocks
    d_diag: np.ndarray = field(repr=False, default=None)  # diagonal of D

    @property
    def d_inv_inf(self):
        rho_max = float(self.rho.max())
        return max(1.0 / (1.0 + self.eta), rho_max**2 / (20.0 + self.eta * rho_max**2))


@dataclass
class ExactSolveResult:
    lam: np.ndarray  # 4n, blocks (a_i, b_i)
    residual_inf: float
    delta_a_inf: float
    d_inv_inf: float

    @property
    def a_coeffs(self):
        return self.lam.reshape(-1, 4)[:, 0]

    @property
    def b_coeffs(self):
        return self.lam.reshape(-1, 4)[:, 1:]


def _support_pairs(points, rho):
    """(i, j) with point i strictly inside support j (self pairs included)."""
    tree = cKDTree(points)
    rows, cols = [], []
    for j, lst in enumerate(tree.query_ball_point(points, np.nextafter(rho, 0.0))):
        lst = sorted(lst)
        rows.extend(lst)
        cols.extend([j] * len(lst))
    return np.asarray(rows, dtype=np.int64), np.asarray(cols, dtype=np.int64)


def assemble(ps, rho, eta, cap=DEFAULT_POINT_CAP) -> ExactSystem:
    """Assemble (A + eta I) and y for the interpolation constraints."""
    points = np.asarray(ps.points, dtype=np.float64)
    normals = np.asarray(ps.normals, dtype=np.float64)
    n = len(points)
    if n > cap:
        raise SolverCapError(f"exact solver is desk-scale only (n={n} > cap={cap})")
    rho = np.broadcast_to(np.asarray(rho, dtype=np.float64), (n,)).copy()
    if np.any(rho <= 0):
        raise ValueError("radii must be positive")

    i_idx, j_idx = _support_pairs(points, rho)
    offsets = points[i_idx] - points[j_idx]
    rj = rho[j_idx]
    phi = kernel.value(offsets, rj)
    grad = kernel.gradient(offsets, rj)
    hess = kernel.hessian(offsets, rj)

    npairs = len(i_idx)
    blocks = np.empty((npairs, 4, 4))
    blocks[:, 0, 0] = phi
    blocks[:, 0, 1:] = -grad
    blocks[:, 1:, 0] = grad
    blocks[:, 1:, 1:] = -hess

    rows = (4 * i_idx[:, None, None] + np.arange(4)[None, :, None]).repeat(4, axis=2)
    cols = (4 * j_idx[:, None, None] + np.arange(4)[None, None, :]).repeat(4, axis=1)
    mat = sp.coo_matrix(
        (blocks.ravel(), (rows.ravel(), cols.ravel())), shape=(4 * n, 4 * n)
    ).tocsr()
    mat = mat + eta * sp.identity(4 * n, format="csr")

    d_diag = np.empty(4 * n)
    d_diag[0::4] = 1.0 + eta
    for a in (1, 2, 3):
        d_diag[a::4] = 20.0 / rho**2 + eta
    delta = mat - sp.diags(d_diag)
    delta_a_inf = float(np.max(np.abs(delta).sum(axis=1))) if delta.nnz else 0.0

    y = np.zeros(4 * n)
    y.reshape(-1, 4)[:, 1:] = normals
    return ExactSystem(n=n, matrix=mat, y=y, eta=eta, rho=rho, delta_a_inf=delta_a_inf, d_diag=d_diag)


def condition_estimate(sys: ExactSystem, lu=None):
    """1-norm condition estimate of A + eta I via its sparse LU factors."""
    if lu is None:
        lu = spla.splu(sys.matrix.tocsc())
    inv_op = spla.LinearOperator(
        sys.matrix.shape,
        matvec=lu.solve,
        rmatvec=lambda v: lu.solve(v, trans="T"),
    )
    return float(spla.onenormest(sys.matrix) * spla.onenormest(inv_op))


def solve(sys: ExactSystem, residual_tol=1e-9, cond_limit=None) -> ExactSolveResult:
    """Direct sparse solve of (A + eta I) lambda = y."""
    try:
        lu = spla.splu(sys.matrix.tocsc())
        lam = lu.solve(sys.y)
    except RuntimeError as exc:  # singular factorization
        raise IllConditionedError(f"factorization failed: {exc}", np.inf) from exc
    residual = float(np.max(np.abs(sys.matrix @ lam - sys.y)))
    scale = 1.0 + float(np.max(np.abs(sys.y)))
    if not np.all(np.isfinite(lam)) or residual > residual_tol * scale:
        raise IllConditionedError(
            f"residual {residual:.3e} exceeds tolerance; eta likely too small",
            condition_estimate(sys, lu),
        )
    if cond_limit is not None:
        cond = condition_estimate(sys, lu)
        if cond > cond_limit:
            raise IllConditionedError(f"condition estimate {cond:.3e} over limit", cond)
    return ExactSolveResult(
        lam=lam,
        residual_inf=residual,
        delta_a_inf=sys.delta_a_inf,
        d_inv_inf=sys.d_inv_inf,
    )


def eval_exact(ps, rho, lam, x, want_gradient=False):
    """Evaluate the exact interpolant sum_j a_j phi_j - <b_j, grad phi_j> at x."""
    points = np.asarray(ps.points, dtype=np.float64)
    n = len(points)
    rho = np.broadcast_to(np.asarray(rho, dtype=np.float64), (n,))
    lam = np.asarray(lam, dtype=np.float64).reshape(n, 4)
    a, b = lam[:, 0], lam[:, 1:]
    x = np.asarray(x, dtype=np.float64).reshape(-1, 3)

    tree = cKDTree(points)
    lists = tree.query_ball_point(x, np.nextafter(float(rho.max()), 0.0))
    values = np.zeros(len(x))
    grads = np.zeros((len(x), 3)) if want_gradient else None
    for qi, lst in enumerate(lists):
        if not lst:
            continue
        j = np.sort(np.asarray(lst, dtype=np.int64))
        offs = x[qi] - points[j]
        inside = np.linalg.norm(offs, axis=1) < rho[j]
        j, offs = j[inside], offs[inside]
        if len(j) == 0:
            continue
        phi = kernel.value(offs, rho[j])
        g = kernel.gradient(offs, rho[j])
        values[qi] = np.sum(a[j] * phi) - np.einsum("ij,ij->", b[j], g)
        if want_gradient:
            h = kernel.hessian(offs, rho[j])
            grads[qi] = a[j] @ g - np.einsum("kij,kj->i", h, b[j])
    if want_gradient:
        return values, grads
    return values
