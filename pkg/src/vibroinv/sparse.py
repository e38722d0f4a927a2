"""Complex sparse assembly, factorization and solves.

Every Helmholtz solve in the package goes through :func:`factorize` and the
two solve routines below.  The default backend is a banded LU with partial
pivoting (LAPACK ``zgbtrf``/``zgbtrs``); SuperLU and unpreconditioned BiCGStab
sit behind the same interface.

Thread safety: a :class:`Factorization` is immutable after construction.
The banded backend only reads the stored factors, so concurrent solves are
safe.  SuperLU solves are serialized through a per-factorization lock.
"""
import threading

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.linalg import lapack

from .errors import ConvergenceError, ShapeError, SingularError

PIVOT_TOL = 1e-14
BACKENDS = ("banded", "superlu", "bicgstab")
_default_backend = "banded"


def set_default_backend(name):
    global _default_backend
    if name not in BACKENDS:
        raise ValueError(f"unknown backend {name!r}; choose from {BACKENDS}")
    _default_backend = name


def get_default_backend():
    return _default_backend


def assemble(rows, cols, vals, shape):
    """Compressed sparse matrix from triplets; duplicates are summed."""
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    vals = np.asarray(vals)
    n_rows, n_cols = shape
    if rows.size:
        if rows.min() < 0 or rows.max() >= n_rows or cols.min() < 0 or cols.max() >= n_cols:
            raise IndexError("triplet index out of range")
    A = sp.coo_matrix((vals, (rows, cols)), shape=(n_rows, n_cols)).tocsr()
    A.sum_duplicates()
    A.sort_indices()
    return A


def _bandwidths(A):
    coo = A.tocoo()
    if coo.nnz == 0:
        return 0, 0
    d = coo.row - coo.col
    return int(max(d.max(), 0)), int(max(-d.min(), 0))


class Factorization:
    """Reusable LU handle of a square complex sparse matrix."""

    def __init__(self, A, backend=None):
        A = sp.csr_matrix(A, dtype=complex)
        if A.shape[0] != A.shape[1]:
            raise ShapeError(f"matrix must be square, got {A.shape}")
        self.matrix = A
        self.n = A.shape[0]
        self.backend = backend or _default_backend
        scale = abs(A).max() if A.nnz else 0.0
        self.scale = float(scale)
        if self.backend == "banded":
            self._factor_banded(A)
        elif self.backend == "superlu":
            self._factor_superlu(A)
        elif self.backend == "bicgstab":
            self._AT = A.T.tocsr()
        else:
            raise ValueError(f"unknown backend {self.backend!r}")

    def _check_pivots(self, diag):
        if self.scale == 0.0 or np.min(np.abs(diag)) < PIVOT_TOL * self.scale:
            raise SingularError(
                f"pivot {np.min(np.abs(diag)):.3e} below {PIVOT_TOL:g} x "
                f"max|entry| = {self.scale:.3e}")

    def _factor_banded(self, A):
        kl, ku = _bandwidths(A)
        n = self.n
        ab = np.zeros((2 * kl + ku + 1, n), dtype=complex)
        coo = A.tocoo()
        ab[kl + ku + coo.row - coo.col, coo.col] = coo.data
        lu, piv, info = lapack.zgbtrf(ab, kl, ku)
        if info < 0:
            raise ValueError(f"zgbtrf argument error {info}")
        self._check_pivots(lu[kl + ku, :])
        if info > 0:
            raise SingularError(f"exactly zero pivot at column {info}")
        self._lu, self._piv, self._kl, self._ku = lu, piv, kl, ku

    def _factor_superlu(self, A):
        try:
            lu = spla.splu(A.tocsc(), diag_pivot_thresh=1.0)
        except RuntimeError as exc:
            raise SingularError(str(exc)) from exc
        self._check_pivots(lu.U.diagonal())
        self._slu = lu
        self._lock = threading.Lock()

    def _prepare(self, b):
        b = np.asarray(b)
        if b.shape[0] != self.n or b.ndim > 2:
            raise ShapeError(f"right-hand side shape {b.shape} does not match n={self.n}")
        return np.asarray(b, dtype=complex)

    def _solve(self, b, trans):
        b = self._prepare(b)
        vec = b.ndim == 1
        B = b[:, None] if vec else b
        if self.backend == "banded":
            x, info = lapack.zgbtrs(self._lu, self._kl, self._ku, B, self._piv,
                                    trans=trans)
            if info != 0:
                raise ValueError(f"zgbtrs argument error {info}")
        elif self.backend == "superlu":
            with self._lock:
                x = self._slu.solve(np.ascontiguousarray(B), trans="T" if trans else "N")
        else:
            M = self._AT if trans else self.matrix
            x = np.empty_like(B)
            for j in range(B.shape[1]):
                xj, info = spla.bicgstab(M, B[:, j], rtol=1e-10, atol=0.0,
                                         maxiter=10 * self.n)
                if info != 0:
                    raise ConvergenceError(f"BiCGStab did not converge (info={info})")
                x[:, j] = xj
        return x[:, 0] if vec else x

    def solve(self, b):
        """Solve ``A x = b`` (``b`` may hold several right-hand sides as columns)."""
        return self._solve(b, 0)

    def transpose_solve(self, b):
        """Solve ``A^T x = b`` with the plain (non-conjugate) transpose."""
        return self._solve(b, 1)

    def adjoint_solve(self, b):
        """Solve ``A^H x = b`` using the stored factors of ``A``."""
        return np.conj(self._solve(np.conj(self._prepare(b)), 1))


def factorize(A, backend=None):
    return Factorization(A, backend=backend)


def solve(F, b):
    return F.solve(b)


def transpose_solve(F, b):
    return F.transpose_solve(b)
