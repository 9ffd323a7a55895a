"""Factorization and GMRES contracts."""

import numpy as np
import pytest
import scipy.sparse as sp

from stbddc_lab.errors import NumericallySingular, StructurallySingular
from stbddc_lab.linalg import (Factorization, GmresConfig, dense_lu_factor,
                               gmres_right_preconditioned, sparse_lu_factor)


def random_diag_dominant(n, rng):
    a = rng.standard_normal((n, n))
    a += np.diag(np.abs(a).sum(axis=1) + 1.0)
    return a


def test_sparse_lu_identity():
    lu = sparse_lu_factor(sp.eye(5, format="csr"))
    b = np.zeros(5)
    b[2] = 1.0
    assert np.allclose(lu.solve(b), b)


def test_sparse_lu_symmetric_2x2():
    # [[2,1],[1,2]] x = [3,3]  ->  x = [1,1]
    a = sp.csr_matrix(np.array([[2.0, 1.0], [1.0, 2.0]]))
    x = sparse_lu_factor(a).solve(np.array([3.0, 3.0]))
    assert np.allclose(x, [1.0, 1.0])


def test_sparse_lu_matches_dense_oracle():
    rng = np.random.default_rng(42)
    a = random_diag_dominant(20, rng)
    b = rng.standard_normal(20)
    expected = np.linalg.solve(a, b)  # dense elimination oracle
    x = sparse_lu_factor(sp.csr_matrix(a)).solve(b)
    assert np.linalg.norm(x - expected) <= 1e-12 * np.linalg.norm(expected)


def test_sparse_lu_roundtrip_50x50():
    rng = np.random.default_rng(7)
    a = sp.csr_matrix(random_diag_dominant(50, rng))
    lu = sparse_lu_factor(a)
    for _ in range(5):
        x = rng.standard_normal(50)
        back = lu.solve(a @ x)
        assert np.linalg.norm(back - x) <= 1e-10 * np.linalg.norm(x)


def test_sparse_lu_transpose_solve():
    rng = np.random.default_rng(3)
    a = random_diag_dominant(12, rng)
    b = rng.standard_normal(12)
    x = sparse_lu_factor(sp.csr_matrix(a)).solve(b, transpose=True)
    assert np.allclose(a.T @ x, b, atol=1e-11)


def test_singular_matrices_raise():
    with pytest.raises(StructurallySingular):
        sparse_lu_factor(sp.csr_matrix((3, 3)))
    singular = sp.csr_matrix(np.array([[1.0, 2.0], [2.0, 4.0]]))
    with pytest.raises(NumericallySingular):
        sparse_lu_factor(singular)
    with pytest.raises(NumericallySingular):
        dense_lu_factor(np.array([[1.0, 2.0], [2.0, 4.0]]))


def test_dense_lu_solves():
    rng = np.random.default_rng(11)
    a = random_diag_dominant(9, rng)
    b = rng.standard_normal(9)
    lu = dense_lu_factor(a)
    assert isinstance(lu, Factorization)
    assert np.allclose(a @ lu.solve(b), b)
    assert np.allclose(a.T @ lu.solve(b, transpose=True), b)


def test_gmres_identity_converges_in_one():
    b = np.array([1.0, -2.0, 3.0])
    x, rep = gmres_right_preconditioned(lambda v: v, None, b)
    assert rep.converged and rep.iterations == 1
    assert np.allclose(x, b)


def test_gmres_perfect_preconditioner_one_iteration():
    rng = np.random.default_rng(5)
    a = random_diag_dominant(15, rng)
    lu = dense_lu_factor(a)
    b = rng.standard_normal(15)
    x, rep = gmres_right_preconditioned(lambda v: a @ v, lu.solve, b)
    assert rep.converged and rep.iterations == 1
    assert np.linalg.norm(a @ x - b) <= 1e-6 * np.linalg.norm(b)


def test_gmres_unpreconditioned_matches_direct():
    rng = np.random.default_rng(8)
    a = random_diag_dominant(10, rng) + 0.3 * rng.standard_normal((10, 10))
    b = rng.standard_normal(10)
    expected = np.linalg.solve(a, b)
    x, rep = gmres_right_preconditioned(
        lambda v: a @ v, None, b, cfg=GmresConfig(tolerance=1e-12))
    assert rep.converged
    assert np.linalg.norm(x - expected) <= 1e-8 * np.linalg.norm(expected)
    hist = rep.residual_norms
    assert all(h2 <= h1 + 1e-14 for h1, h2 in zip(hist, hist[1:]))


def test_gmres_full_convergence_within_n_plus_two():
    rng = np.random.default_rng(13)
    for seed in range(4):
        a = np.random.default_rng(seed).standard_normal((8, 8)) + 4 * np.eye(8)
        b = rng.standard_normal(8)
        _, rep = gmres_right_preconditioned(
            lambda v: a @ v, None, b, cfg=GmresConfig(tolerance=1e-12))
        assert rep.converged and rep.iterations <= 10  # n + 2


def test_gmres_zero_rhs_returns_zero():
    x, rep = gmres_right_preconditioned(lambda v: 2 * v, None, np.zeros(4))
    assert rep.converged and rep.iterations == 0
    assert np.all(x == 0)


def test_gmres_max_iterations_flag():
    rng = np.random.default_rng(21)
    a = random_diag_dominant(30, rng) + rng.standard_normal((30, 30))
    b = rng.standard_normal(30)
    _, rep = gmres_right_preconditioned(
        lambda v: a @ v, None, b,
        cfg=GmresConfig(tolerance=1e-14, max_iterations=3))
    assert not rep.converged and rep.iterations == 3


def test_gmres_restart_still_converges():
    rng = np.random.default_rng(17)
    a = random_diag_dominant(25, rng)
    b = rng.standard_normal(25)
    x, rep = gmres_right_preconditioned(
        lambda v: a @ v, None, b,
        cfg=GmresConfig(tolerance=1e-10, restart=5, max_iterations=200))
    assert rep.converged
    assert np.linalg.norm(a @ x - b) <= 1e-9 * np.linalg.norm(b)


def test_gmres_config_validation():
    with pytest.raises(ValueError):
        GmresConfig(tolerance=0.0)
    with pytest.raises(ValueError):
        GmresConfig(max_iterations=0)
