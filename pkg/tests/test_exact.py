"""Exact solver assembly and solution against dense and analytic oracles."""

import numpy as np
import pytest

from hrbfsurf import kernel
from hrbfsurf.exact import (
    IllConditionedError,
    SolverCapError,
    assemble,
    condition_estimate,
    eval_exact,
    solve,
)
from hrbfsurf.model import model_from_arrays, quasi_lambda
from hrbfsurf.pointset import HermitePointSet

from conftest import random_unit_vectors, tuned_model


def _random_ps(n, seed, spread=1.0):
    rng = np.random.default_rng(seed)
    pts = rng.uniform(-spread, spread, (n, 3))
    return HermitePointSet(pts, random_unit_vectors(n, rng))


def test_single_point_block():
    ps = HermitePointSet(np.zeros((1, 3)), np.array([[0.0, 0.0, 1.0]]))
    rho, eta = 1.5, 0.25
    sys = assemble(ps, rho, eta)
    dense = sys.matrix.toarray()
    # the self block is diag(1, 20/rho^2, ...) plus eta on the diagonal
    expect = np.diag([1.0, 20.0 / rho**2, 20.0 / rho**2, 20.0 / rho**2]) + eta * np.eye(4)
    np.testing.assert_allclose(dense, expect, atol=1e-14)
    assert sys.delta_a_inf == 0.0
    res = solve(sys)
    np.testing.assert_allclose(res.lam[1:], ps.normals[0] / (20.0 / rho**2 + eta))


def test_assembly_matches_dense_oracle():
    ps = _random_ps(25, 0, spread=0.8)
    rho, eta = 0.9, 0.1
    sys = assemble(ps, rho, eta)
    pts = ps.points
    dense = eta * np.eye(100)
    for i in range(25):
        for j in range(25):
            d = pts[i] - pts[j]
            if np.linalg.norm(d) >= rho:
                continue
            blk = np.empty((4, 4))
            blk[0, 0] = kernel.value(d[None], rho)[0]
            blk[0, 1:] = -kernel.gradient(d[None], rho)[0]
            blk[1:, 0] = kernel.gradient(d[None], rho)[0]
            blk[1:, 1:] = -kernel.hessian(d[None], rho)[0]
            dense[4 * i : 4 * i + 4, 4 * j : 4 * j + 4] += blk
    np.testing.assert_allclose(sys.matrix.toarray(), dense, atol=1e-13)
    # off-diagonal infinity norm against the same dense assembly
    delta = dense - np.diag(sys.d_diag)
    assert sys.delta_a_inf == pytest.approx(np.abs(delta).sum(axis=1).max())


def test_isolated_centers_match_quasi_solution():
    # centers farther apart than any support: A + eta I is exactly D
    pts = 4.0 * np.arange(6)[:, None] * np.array([[1.0, 0.0, 0.0]])
    rng = np.random.default_rng(1)
    nrm = random_unit_vectors(6, rng)
    ps = HermitePointSet(pts, nrm)
    eta = 0.5
    sys = assemble(ps, 1.0, eta)
    res = solve(sys)
    model = model_from_arrays(pts, nrm, 1.0, eta)
    assert np.max(np.abs(res.lam - quasi_lambda(model))) < 1e-12
    assert res.delta_a_inf == 0.0


def test_interpolation_constraints_without_regularization():
    # with eta = 0 the solution interpolates: f(p_i) = 0, grad f(p_i) = n_i
    ps = _random_ps(40, 2, spread=0.6)
    sys = assemble(ps, 1.1, 0.0)
    res = solve(sys)
    vals, grads = eval_exact(ps, 1.1, res.lam, ps.points, want_gradient=True)
    assert np.max(np.abs(vals)) < 1e-8
    assert np.max(np.abs(grads - ps.normals)) < 1e-8


def test_d_inv_inf_formula():
    ps = _random_ps(10, 3)
    sys = assemble(ps, 1.0, 2.0)
    # for rho < sqrt(20) the value-block diagonal dominates
    assert sys.d_inv_inf == pytest.approx(1.0 / 3.0)
    sys_wide = assemble(ps, 4.9, 2.0)  # past the rho^2 = 20 crossover
    assert sys_wide.d_inv_inf == pytest.approx(4.9**2 / (20.0 + 2.0 * 4.9**2))


def test_solver_cap():
    ps = _random_ps(30, 4)
    with pytest.raises(SolverCapError):
        assemble(ps, 1.0, 0.1, cap=20)


def test_condition_estimate_reasonable():
    ps = _random_ps(15, 5)
    well = assemble(ps, 0.8, 5.0)
    cond = condition_estimate(well)
    assert 1.0 <= cond < 1e4


def test_cond_limit_triggers():
    ps = _random_ps(15, 6)
    sys = assemble(ps, 0.8, 5.0)
    with pytest.raises(IllConditionedError):
        solve(sys, cond_limit=1.0)


def test_eval_exact_gradient_matches_fd():
    ps = _random_ps(20, 7, spread=0.5)
    sys = assemble(ps, 1.0, 0.3)
    res = solve(sys)
    rng = np.random.default_rng(8)
    x = rng.uniform(-0.5, 0.5, (20, 3))
    vals, grads = eval_exact(ps, 1.0, res.lam, x, want_gradient=True)
    h = 1e-6
    for a in range(3):
        e = np.zeros(3)
        e[a] = h
        fd = (eval_exact(ps, 1.0, res.lam, x + e) - eval_exact(ps, 1.0, res.lam, x - e)) / (2 * h)
        assert np.max(np.abs(fd - grads[:, a])) < 1e-5


def test_tuned_eta_keeps_exact_near_quasi(sphere_ps):
    norm_ps, tp, model = tuned_model(sphere_ps)
    sys = assemble(norm_ps, tp.rho, tp.eta)
    res = solve(sys)
    err = np.max(np.abs(res.lam - quasi_lambda(model)))
    assert res.d_inv_inf * res.delta_a_inf < 1.0
    assert err <= 1e-4
