"""Wendland's C2 compactly supported RBF and its exact derivatives.

phi(t) = (1 - t)^4 (4t + 1) on t in [0, 1), identically zero outside.
All derivative formulas are closed-form; the 1/r factors in the second
derivatives have a finite limit at r = 0 which is handled analytically
(diagonal -20/rho^2, off-diagonal 0).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class KernelEval:
    value: float
    gradient: np.ndarray
    hessian: np.ndarray
    support: float
    inside_support: bool


@dataclass
class DerivativeBounds:
    grad_bound: float  # max |d phi / d x|, attained at r = rho/2
    second_diag_bound: float  # max |d2 phi / d x2|, attained at r = 0
    second_mixed_bound: float  # max |d2 phi / dx dy|, attained at r = rho/2


def value(offsets, rho):
    """phi at x - center offsets; (k, 3) -> (k,).  rho scalar or (k,)."""
    offsets = np.asarray(offsets, dtype=np.float64)
    r = np.linalg.norm(offsets, axis=-1)
    t = r / rho
    inside = t < 1.0
    one_m = np.where(inside, 1.0 - t, 0.0)
    return one_m**4 * (4.0 * t + 1.0)


def gradient(offsets, rho):
    """Gradient of phi w.r.t. the query point; (k, 3) -> (k, 3)."""
    offsets = np.asarray(offsets, dtype=np.float64)
    r = np.linalg.norm(offsets, axis=-1)
    t = r / rho
    inside = t < 1.0
    one_m = np.where(inside, 1.0 - t, 0.0)
    coef = -20.0 / np.square(rho) * one_m**3
    return coef[..., None] * offsets


def hessian(offsets, rho):
    """Hessian of phi w.r.t. the query point; (k, 3) -> (k, 3, 3)."""
    offsets = np.asarray(offsets, dtype=np.float64)
    r = np.linalg.norm(offsets, axis=-1)
    rho = np.broadcast_to(np.asarray(rho, dtype=np.float64), r.shape)
    t = r / rho
    inside = t < 1.0
    one_m = np.where(inside, 1.0 - t, 0.0)
    diag_term = -20.0 / np.square(rho) * one_m**3
    r_safe = np.where(r > 0.0, r, 1.0)
    outer_coef = 60.0 / rho**3 * one_m**2 / r_safe
    h = outer_coef[..., None, None] * (offsets[..., :, None] * offsets[..., None, :])
    h += diag_term[..., None, None] * np.eye(3)
    return h


def evaluate(center, rho, x, want_gradient=True, want_hessian=True) -> KernelEval:
    """Scalar evaluation of phi and its requested derivatives at x."""
    if rho <= 0:
        raise ValueError("rho must be positive")
    center = np.asarray(center, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    d = x - center
    r2 = float(d @ d)
    if r2 >= rho * rho:
        return KernelEval(0.0, np.zeros(3), np.zeros((3, 3)), rho, False)
    val = float(value(d[None], rho)[0])
    grad = gradient(d[None], rho)[0] if want_gradient else np.zeros(3)
    hess = hessian(d[None], rho)[0] if want_hessian else np.zeros((3, 3))
    return KernelEval(val, grad, hess, rho, True)


def derivative_bounds(rho) -> DerivativeBounds:
    """Closed-form maxima of |first| and |second| derivatives over the support."""
    if rho <= 0:
        raise ValueError("rho must be positive")
    return DerivativeBounds(
        grad_bound=5.0 / (4.0 * rho),
        second_diag_bound=20.0 / rho**2,
        second_mixed_bound=15.0 / (2.0 * rho**2),
    )
