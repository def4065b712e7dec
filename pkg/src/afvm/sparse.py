"""Compressed sparse matrices and the iterative/direct solvers used on them.

Assembly produces coordinate triplets which are compressed once (duplicates
summed).  Storage and matrix-vector products are delegated to scipy's CSR
engine; the solver iterations themselves (Jacobi-preconditioned CG and
BiCGStab) are implemented here so that residual histories and breakdown
handling stay under our control.  Dense LU (LAPACK, partial pivoting) serves
as fallback and as oracle for small systems.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse


class DimensionMismatch(Exception):
    pass


class NoConvergence(Exception):
    pass


class NotSymmetric(Exception):
    pass


class SingularMatrix(Exception):
    pass


class BreakdownDetected(Exception):
    pass


@dataclass(frozen=True)
class LinearSolveReport:
    method: str
    iterations: int
    residual: float
    wall_time: float


class CsrMatrix:
    """Square sparse matrix in compressed-row layout.

    Column indices are sorted and unique within each row; duplicate entries
    of the assembly triplets are summed during compression.
    """

    def __init__(self, scipy_csr):
        scipy_csr.sum_duplicates()
        scipy_csr.sort_indices()
        self._m = scipy_csr

    @classmethod
    def from_coo(cls, rows, cols, values, shape) -> "CsrMatrix":
        coo = scipy.sparse.coo_matrix(
            (np.asarray(values, dtype=float), (np.asarray(rows), np.asarray(cols))),
            shape=shape,
        )
        return cls(coo.tocsr())

    @classmethod
    def from_dense(cls, dense) -> "CsrMatrix":
        return cls(scipy.sparse.csr_matrix(np.asarray(dense, dtype=float)))

    @property
    def shape(self):
        return self._m.shape

    @property
    def indptr(self):
        return self._m.indptr

    @property
    def indices(self):
        return self._m.indices

    @property
    def data(self):
        return self._m.data

    @property
    def nnz(self) -> int:
        return self._m.nnz

    def matvec(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.shape[1],):
            raise DimensionMismatch(f"vector of length {x.shape} against {self.shape}")
        return self._m @ x

    def __matmul__(self, x):
        return self.matvec(x)

    def __sub__(self, other: "CsrMatrix") -> "CsrMatrix":
        if self.shape != other.shape:
            raise DimensionMismatch("matrix difference needs equal shapes")
        return CsrMatrix(self._m - other._m)

    def to_dense(self) -> np.ndarray:
        return self._m.toarray()

    def diagonal(self) -> np.ndarray:
        return self._m.diagonal()

    def symmetry_defect(self) -> float:
        """max |A - A^T| relative to max |A| (0 for an all-zero matrix)."""
        scale = np.abs(self.data).max() if self.nnz else 0.0
        if scale == 0.0:
            return 0.0
        d = self._m - self._m.T
        return float(np.abs(d.data).max() / scale) if d.nnz else 0.0


def spmv(matrix: CsrMatrix, vector: np.ndarray) -> np.ndarray:
    """Sparse matrix-vector product."""
    return matrix.matvec(vector)


def _check_square(matrix: CsrMatrix, rhs: np.ndarray):
    n_rows, n_cols = matrix.shape
    if n_rows != n_cols:
        raise DimensionMismatch("solver needs a square matrix")
    if rhs.shape != (n_rows,):
        raise DimensionMismatch("right-hand side length mismatch")


def _jacobi(matrix: CsrMatrix) -> np.ndarray:
    d = matrix.diagonal().copy()
    d[d == 0.0] = 1.0
    return d


def solve_cg(matrix, rhs, tol=1e-10, max_iters=None, collect=None):
    """Jacobi-preconditioned conjugate gradients for symmetric matrices.

    ``collect``, if given a list, receives a copy of the iterate after every
    step.  Raises NotSymmetric when the matrix fails the symmetry check and
    NoConvergence when max_iters is exhausted.
    """
    rhs = np.asarray(rhs, dtype=float)
    _check_square(matrix, rhs)
    if matrix.symmetry_defect() > 1e-10:
        raise NotSymmetric("matrix is not symmetric to 1e-10")
    start = time.perf_counter()
    n = rhs.size
    if max_iters is None:
        max_iters = max(1000, 20 * n)
    norm_b = np.linalg.norm(rhs)
    if norm_b == 0.0:
        return np.zeros(n), LinearSolveReport("cg", 0, 0.0, time.perf_counter() - start)

    diag = _jacobi(matrix)
    x = np.zeros(n)
    r = rhs.copy()
    z = r / diag
    p = z.copy()
    rz = r @ z
    for it in range(1, max_iters + 1):
        ap = matrix.matvec(p)
        pap = p @ ap
        if pap <= 0.0:
            raise BreakdownDetected("conjugate gradients lost positive definiteness")
        alpha = rz / pap
        x += alpha * p
        r -= alpha * ap
        if collect is not None:
            collect.append(x.copy())
        if np.linalg.norm(r) <= tol * norm_b:
            true_res = np.linalg.norm(rhs - matrix.matvec(x)) / norm_b
            if true_res <= tol:
                return x, LinearSolveReport("cg", it, float(true_res), time.perf_counter() - start)
            r = rhs - matrix.matvec(x)
        z = r / diag
        rz_new = r @ z
        beta = rz_new / rz
        rz = rz_new
        p = z + beta * p
    raise NoConvergence(f"cg: no convergence within {max_iters} iterations")


def solve_general(matrix, rhs, tol=1e-10, max_iters=None):
    """Jacobi-preconditioned BiCGStab for general (nonsymmetric) matrices."""
    rhs = np.asarray(rhs, dtype=float)
    _check_square(matrix, rhs)
    start = time.perf_counter()
    n = rhs.size
    if max_iters is None:
        max_iters = max(1000, 20 * n)
    norm_b = np.linalg.norm(rhs)
    if norm_b == 0.0:
        return np.zeros(n), LinearSolveReport("bicgstab", 0, 0.0, time.perf_counter() - start)

    diag = _jacobi(matrix)
    x = np.zeros(n)
    r = rhs.copy()
    r0 = r.copy()
    rho = alpha = omega = 1.0
    v = np.zeros(n)
    p = np.zeros(n)
    eps = 1e-300
    for it in range(1, max_iters + 1):
        rho_new = r0 @ r
        if abs(rho_new) < eps:
            raise BreakdownDetected("bicgstab: rho breakdown")
        beta = (rho_new / rho) * (alpha / omega) if it > 1 else 0.0
        rho = rho_new
        p = r + beta * (p - omega * v) if it > 1 else r.copy()
        phat = p / diag
        v = matrix.matvec(phat)
        denom = r0 @ v
        if abs(denom) < eps:
            raise BreakdownDetected("bicgstab: alpha breakdown")
        alpha = rho / denom
        s = r - alpha * v
        if np.linalg.norm(s) <= tol * norm_b:
            x += alpha * phat
            true_res = np.linalg.norm(rhs - matrix.matvec(x)) / norm_b
            if true_res <= tol:
                return x, LinearSolveReport(
                    "bicgstab", it, float(true_res), time.perf_counter() - start
                )
            r = rhs - matrix.matvec(x)
            continue
        shat = s / diag
        t = matrix.matvec(shat)
        tt = t @ t
        if tt < eps:
            raise BreakdownDetected("bicgstab: omega breakdown")
        omega = (t @ s) / tt
        if abs(omega) < eps:
            raise BreakdownDetected("bicgstab: omega breakdown")
        x += alpha * phat + omega * shat
        r = s - omega * t
        if np.linalg.norm(r) <= tol * norm_b:
            true_res = np.linalg.norm(rhs - matrix.matvec(x)) / norm_b
            if true_res <= tol:
                return x, LinearSolveReport(
                    "bicgstab", it, float(true_res), time.perf_counter() - start
                )
            r = rhs - matrix.matvec(x)
    raise NoConvergence(f"bicgstab: no convergence within {max_iters} iterations")


def solve_dense_lu(matrix, rhs) -> np.ndarray:
    """Dense LU with partial pivoting; fallback and oracle for small systems."""
    rhs = np.asarray(rhs, dtype=float)
    if isinstance(matrix, CsrMatrix):
        _check_square(matrix, rhs)
        dense = matrix.to_dense()
    else:
        dense = np.asarray(matrix, dtype=float)
        if dense.shape[0] != dense.shape[1] or rhs.shape != (dense.shape[0],):
            raise DimensionMismatch("dense solve needs square matrix and matching rhs")
    scale = np.abs(dense).max()
    if scale == 0.0:
        raise SingularMatrix("zero matrix")
    with warnings.catch_warnings():
        # the pivot check below turns scipy's singularity warning into an error
        warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
        lu, piv = scipy.linalg.lu_factor(dense, check_finite=False)
    if np.abs(np.diag(lu)).min() < 1e-14 * scale:
        raise SingularMatrix("pivot below 1e-14 of the matrix scale")
    return scipy.linalg.lu_solve((lu, piv), rhs, check_finite=False)
