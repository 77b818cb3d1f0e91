"""CSR matrix wrapper with cached squared row norms."""

from __future__ import annotations

import numpy as np
import scipy.sparse as sps

from .errors import ContractViolation, InvalidParameter


class SparseMatrix:
    """Row-compressed real matrix plus the per-row data row-action methods need.

    The squared row norms ``||a^i||^2`` are computed once at construction and
    cached. Mutating ``csr.data`` afterwards leaves the cache stale; that is
    exactly what :meth:`norm_cache_ok` detects.
    """

    def __init__(self, csr):
        csr = sps.csr_matrix(csr, dtype=np.float64)
        csr.sum_duplicates()
        csr.sort_indices()
        self.csr = csr
        self.row_norms_sq = self._row_norms_sq()

    @classmethod
    def from_dense(cls, a) -> "SparseMatrix":
        return cls(sps.csr_matrix(np.atleast_2d(np.asarray(a, dtype=np.float64))))

    @classmethod
    def from_coo(cls, rows, cols, values, shape) -> "SparseMatrix":
        return cls(sps.coo_matrix((values, (rows, cols)), shape=shape).tocsr())

    @property
    def shape(self) -> tuple[int, int]:
        return self.csr.shape

    @property
    def nnz(self) -> int:
        return self.csr.nnz

    @property
    def indptr(self) -> np.ndarray:
        return self.csr.indptr

    @property
    def indices(self) -> np.ndarray:
        return self.csr.indices

    @property
    def data(self) -> np.ndarray:
        return self.csr.data

    def _row_norms_sq(self) -> np.ndarray:
        sq = self.csr.multiply(self.csr)
        return np.asarray(sq.sum(axis=1), dtype=np.float64).ravel()

    def row(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        lo, hi = self.csr.indptr[i], self.csr.indptr[i + 1]
        return self.csr.indices[lo:hi], self.csr.data[lo:hi]

    def matvec(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.shape[1],):
            raise ContractViolation(f"expected vector of length {self.shape[1]}, got {x.shape}")
        return self.csr @ x

    def rmatvec(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=np.float64)
        if y.shape != (self.shape[0],):
            raise ContractViolation(f"expected vector of length {self.shape[0]}, got {y.shape}")
        return self.csr.T @ y

    def rows(self, idx) -> "SparseMatrix":
        return SparseMatrix(self.csr[np.asarray(idx, dtype=np.int64)])

    def column_counts(self) -> np.ndarray:
        """Number of stored nonzeros in each column (``s_j``)."""
        nz = self.csr.data != 0
        return np.bincount(self.csr.indices[nz], minlength=self.shape[1])

    def zero_rows(self) -> np.ndarray:
        return np.flatnonzero(self.row_norms_sq == 0)

    def zero_columns(self) -> np.ndarray:
        return np.flatnonzero(self.column_counts() == 0)

    def norm_cache_ok(self, rtol: float = 1e-14) -> bool:
        fresh = self._row_norms_sq()
        return bool(np.all(np.abs(fresh - self.row_norms_sq) <= rtol * np.abs(fresh)))

    def require_nonzero_rows_and_columns(self) -> None:
        zr, zc = self.zero_rows(), self.zero_columns()
        if zr.size or zc.size:
            raise InvalidParameter(
                f"matrix has {zr.size} zero rows and {zc.size} zero columns; prune before use"
            )

    def toarray(self) -> np.ndarray:
        return self.csr.toarray()

    def __repr__(self) -> str:
        return f"SparseMatrix(shape={self.shape}, nnz={self.nnz})"
