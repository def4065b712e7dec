import numpy as np
import pytest

from afvm.sparse import (
    CsrMatrix,
    DimensionMismatch,
    NotSymmetric,
    SingularMatrix,
    solve_cg,
    solve_dense_lu,
    solve_general,
    spmv,
)


def random_sparse(n, density, rng, spd=False):
    dense = rng.normal(size=(n, n))
    dense[rng.random((n, n)) > density] = 0.0
    if spd:
        dense = dense @ dense.T + n * np.eye(n)
    else:
        dense += n * np.eye(n)  # diagonally dominant enough to be solvable
    return dense


def test_spmv_identity():
    m = CsrMatrix.from_dense(np.eye(4))
    x = np.array([1.0, 2.0, 3.0, 4.0])
    assert np.array_equal(spmv(m, x), x)


def test_spmv_against_dense_oracle():
    rng = np.random.default_rng(0)
    dense = random_sparse(50, 0.1, rng)
    m = CsrMatrix.from_dense(dense)
    x = rng.normal(size=50)
    assert np.abs(spmv(m, x) - dense @ x).max() < 1e-13 * np.abs(dense @ x).max()


def test_spmv_zero_matrix():
    m = CsrMatrix.from_dense(np.zeros((3, 3)))
    assert np.array_equal(spmv(m, np.ones(3)), np.zeros(3))


def test_spmv_dimension_mismatch():
    m = CsrMatrix.from_dense(np.eye(3))
    with pytest.raises(DimensionMismatch):
        spmv(m, np.ones(4))


def test_from_coo_sums_duplicates():
    m = CsrMatrix.from_coo([0, 0, 1], [0, 0, 1], [1.0, 2.0, 5.0], shape=(2, 2))
    assert np.allclose(m.to_dense(), [[3.0, 0.0], [0.0, 5.0]])
    # indices sorted and unique per row
    assert m.indptr[1] - m.indptr[0] == 1


def test_diagonal_solve():
    m = CsrMatrix.from_dense(np.diag([1.0, 2.0, 3.0, 4.0, 5.0]))
    x, report = solve_cg(m, np.ones(5), tol=1e-12)
    assert np.allclose(x, [1, 1 / 2, 1 / 3, 1 / 4, 1 / 5], atol=1e-12)
    assert report.residual <= 1e-12


def test_cg_against_lu_oracle():
    rng = np.random.default_rng(4)
    dense = random_sparse(80, 0.05, rng, spd=True)
    m = CsrMatrix.from_dense(dense)
    b = rng.normal(size=80)
    x, report = solve_cg(m, b, tol=1e-12)
    ref = solve_dense_lu(m, b)
    assert np.abs(x - ref).max() <= 1e-9 * np.abs(ref).max()
    recomputed = np.linalg.norm(b - dense @ x) / np.linalg.norm(b)
    assert abs(recomputed - report.residual) <= 1e-12


def test_general_solver_nonsymmetric():
    rng = np.random.default_rng(5)
    dense = random_sparse(60, 0.08, rng, spd=False)
    m = CsrMatrix.from_dense(dense)
    b = rng.normal(size=60)
    x, report = solve_general(m, b, tol=1e-11)
    ref = solve_dense_lu(m, b)
    assert np.abs(x - ref).max() <= 1e-8 * np.abs(ref).max()
    recomputed = np.linalg.norm(b - dense @ x) / np.linalg.norm(b)
    assert abs(recomputed - report.residual) <= 1e-12


def test_cg_requires_symmetry():
    dense = np.array([[2.0, 1.0], [0.0, 2.0]])
    with pytest.raises(NotSymmetric):
        solve_cg(CsrMatrix.from_dense(dense), np.ones(2))


def test_singular_matrix_rejected():
    with pytest.raises(SingularMatrix):
        solve_dense_lu(CsrMatrix.from_dense(np.zeros((3, 3))), np.ones(3))
    singular = np.array([[1.0, 2.0], [2.0, 4.0]])
    with pytest.raises(SingularMatrix):
        solve_dense_lu(CsrMatrix.from_dense(singular), np.ones(2))


def test_zero_rhs_returns_zero():
    m = CsrMatrix.from_dense(np.eye(3))
    x, report = solve_cg(m, np.zeros(3))
    assert np.array_equal(x, np.zeros(3))
    assert report.iterations == 0


def test_cg_energy_error_monotone():
    rng = np.random.default_rng(6)
    dense = random_sparse(100, 0.04, rng, spd=True)
    m = CsrMatrix.from_dense(dense)
    b = rng.normal(size=100)
    exact = solve_dense_lu(m, b)
    iterates = []
    solve_cg(m, b, tol=1e-12, collect=iterates)
    energies = []
    for x in iterates:
        err = x - exact
        energies.append(float(err @ (dense @ err)))
    diffs = np.diff(energies)
    assert (diffs <= 1e-10 * max(energies)).all()


def test_symmetry_defect():
    m = CsrMatrix.from_dense(np.array([[1.0, 2.0], [2.0, 1.0]]))
    assert m.symmetry_defect() == 0.0
    m2 = CsrMatrix.from_dense(np.array([[1.0, 2.0], [2.0 + 1e-3, 1.0]]))
    assert m2.symmetry_defect() > 1e-4
