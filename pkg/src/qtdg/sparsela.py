"""Sparse CSR matrices, direct solves and 2-norm condition estimates.

Thin, checked layer over scipy.sparse: assembly produces COO triplets, the
solver factorizes once with SuperLU, and the condition estimator runs power
iteration on A^T A (largest singular value) and on its inverse through the
LU factors (smallest singular value).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.io
import scipy.sparse
import scipy.sparse.linalg


class SingularMatrixError(RuntimeError):
    """Factorization failed or the computed solution does not solve the system."""


class IterationError(RuntimeError):
    """Condition-number power iteration failed to converge."""


@dataclass(frozen=True)
class CsrMatrix:
    """Compressed sparse row matrix (canonical form, duplicates summed)."""

    indptr: np.ndarray
    indices: np.ndarray
    data: np.ndarray
    shape: tuple

    @classmethod
    def from_coo(cls, rows, cols, vals, shape):
        m = scipy.sparse.coo_matrix(
            (np.asarray(vals, dtype=np.float64), (rows, cols)), shape=shape
        ).tocsr()
        m.sum_duplicates()
        return cls(m.indptr, m.indices, m.data, m.shape)

    @classmethod
    def from_dense(cls, array):
        m = scipy.sparse.csr_matrix(np.asarray(array, dtype=np.float64))
        return cls(m.indptr, m.indices, m.data, m.shape)

    def to_scipy(self):
        return scipy.sparse.csr_matrix(
            (self.data, self.indices, self.indptr), shape=self.shape
        )

    def to_dense(self):
        return self.to_scipy().toarray()

    @property
    def nnz(self):
        return int(self.data.size)

    def matvec(self, x):
        return self.to_scipy() @ np.asarray(x, dtype=np.float64)

    def rmatvec(self, x):
        return self.to_scipy().T @ np.asarray(x, dtype=np.float64)


def _factorize(A):
    sp = A.to_scipy().tocsc()
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", scipy.sparse.linalg.MatrixRankWarning)
            lu = scipy.sparse.linalg.splu(sp)
    except RuntimeError as err:
        raise SingularMatrixError(str(err)) from err
    return lu


def solve(A, b, residual_tol=1e-10):
    """Solve A x = b by sparse LU; verifies the residual.

    Raises SingularMatrixError when factorization fails or the relative
    residual exceeds 1e-6; warns when it exceeds ``residual_tol``.
    """
    b = np.asarray(b, dtype=np.float64)
    n = A.shape[0]
    if A.shape[0] != A.shape[1] or b.shape[0] != n:
        raise ValueError(f"shape mismatch: A is {A.shape}, b has {b.shape}")
    x = _factorize(A).solve(b)
    if not np.all(np.isfinite(x)):
        raise SingularMatrixError("solution contains non-finite entries")
    scale = max(1.0, float(np.linalg.norm(b)))
    res = float(np.linalg.norm(A.matvec(x) - b)) / scale
    if res > 1e-6:
        raise SingularMatrixError(f"relative residual {res:.3e} exceeds 1e-6")
    if res > residual_tol:
        warnings.warn(f"solve residual {res:.3e} above {residual_tol:.1e}")
    return x


def _power_iteration(apply_op, n, rng, tol, maxiter):
    lam = 0.0
    v = rng.standard_normal(n)
    v /= np.linalg.norm(v)
    for _ in range(maxiter):
        w = apply_op(v)
        lam_new = float(v @ w)
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return 0.0
        v = w / norm
        if abs(lam_new - lam) <= tol * max(abs(lam_new), 1e-300):
            return lam_new
        lam = lam_new
    raise IterationError(f"power iteration did not converge in {maxiter} steps")


def cond2_estimate(A, tol=1e-4, maxiter=5000, seed=0):
    """Estimate the 2-norm condition number sigma_max / sigma_min.

    Power iteration on A^T A and on (A^T A)^{-1} via the sparse LU factors.
    Raises SingularMatrixError for singular A and IterationError when the
    iteration stalls.
    """
    if A.shape[0] != A.shape[1]:
        raise ValueError("condition estimate requires a square matrix")
    n = A.shape[0]
    if n == 1:
        val = A.to_dense()[0, 0]
        if val == 0.0:
            raise SingularMatrixError("1x1 zero matrix")
        return 1.0
    rng = np.random.default_rng(seed)
    sp = A.to_scipy()
    lu = _factorize(A)
    lam_max = _power_iteration(lambda v: sp.T @ (sp @ v), n, rng, tol, maxiter)
    inv = lambda v: lu.solve(lu.solve(v, trans="T"), trans="N")
    lam_inv = _power_iteration(inv, n, rng, tol, maxiter)
    if not np.isfinite(lam_inv) or lam_inv <= 0.0:
        raise SingularMatrixError("matrix is numerically singular")
    return float(np.sqrt(lam_max * lam_inv))


def save_matrix_market(A, path, comment=""):
    """Write the matrix in Matrix Market coordinate format at exactly `path`."""
    with open(path, "wb") as fh:
        scipy.io.mmwrite(fh, A.to_scipy(), comment=comment)
