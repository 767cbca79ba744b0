"""Row-compressed sparse matrices."""
from __future__ import annotations

import numpy as np

from bundlenet.errors import ShapeError
from bundlenet.numcore import _kernels


class CSRMatrix:
    """Immutable CSR matrix of float64 values.

    Column indices are strictly increasing within each row.  The transpose
    is built lazily and cached because the spmm backward pass needs it.
    """

    __slots__ = ("shape", "indptr", "indices", "data", "_transpose")

    def __init__(self, shape, indptr, indices, data, *, check=True):
        self.shape = (int(shape[0]), int(shape[1]))
        self.indptr = np.ascontiguousarray(indptr, dtype=np.int64)
        self.indices = np.ascontiguousarray(indices, dtype=np.int64)
        self.data = np.ascontiguousarray(data, dtype=np.float64)
        self._transpose = None
        for arr in (self.indptr, self.indices, self.data):
            arr.flags.writeable = False
        if check:
            self._validate()

    def _validate(self):
        n_rows, n_cols = self.shape
        if self.indptr.shape != (n_rows + 1,) or self.indptr[0] != 0:
            raise ValueError("indptr must have length rows+1 and start at 0")
        if np.any(np.diff(self.indptr) < 0):
            raise ValueError("indptr must be non-decreasing")
        nnz = int(self.indptr[-1])
        if self.indices.shape != (nnz,) or self.data.shape != (nnz,):
            raise ValueError("indices/data length must equal indptr[-1]")
        if nnz:
            if self.indices.min() < 0 or self.indices.max() >= n_cols:
                raise ValueError("column index out of range")
            step = np.diff(self.indices)
            row_start = np.zeros(nnz, dtype=bool)
            row_start[self.indptr[:-1][np.diff(self.indptr) > 0]] = True
            if np.any(step[~row_start[1:]] <= 0):
                raise ValueError("column indices must be strictly increasing within a row")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("sparse values must be finite")

    @property
    def nnz(self) -> int:
        return int(self.indptr[-1])

    @classmethod
    def from_coo(cls, shape, rows, cols, values=None) -> "CSRMatrix":
        """Build from coordinate triples; duplicate coordinates are summed."""
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        if values is None:
            values = np.ones(rows.shape[0], dtype=np.float64)
        values = np.asarray(values, dtype=np.float64)
        n_rows, n_cols = int(shape[0]), int(shape[1])
        if rows.size and (rows.min() < 0 or rows.max() >= n_rows or cols.min() < 0 or cols.max() >= n_cols):
            raise ValueError("coordinate out of range")
        key = rows * n_cols + cols
        order = np.argsort(key, kind="stable")
        key, values = key[order], values[order]
        uniq, start = np.unique(key, return_index=True)
        summed = np.add.reduceat(values, start) if uniq.size else values[:0]
        r, c = np.divmod(uniq, n_cols) if n_cols else (uniq, uniq)
        indptr = np.zeros(n_rows + 1, dtype=np.int64)
        np.cumsum(np.bincount(r, minlength=n_rows), out=indptr[1:])
        return cls((n_rows, n_cols), indptr, c, summed, check=False)

    @classmethod
    def from_dense(cls, dense) -> "CSRMatrix":
        dense = np.asarray(dense, dtype=np.float64)
        r, c = np.nonzero(dense)
        return cls.from_coo(dense.shape, r, c, dense[r, c])

    @classmethod
    def identity(cls, n: int) -> "CSRMatrix":
        idx = np.arange(n, dtype=np.int64)
        return cls((n, n), np.arange(n + 1, dtype=np.int64), idx, np.ones(n))

    def row_ids(self) -> np.ndarray:
        return np.repeat(np.arange(self.shape[0], dtype=np.int64), np.diff(self.indptr))

    def transpose(self) -> "CSRMatrix":
        if self._transpose is None:
            t = CSRMatrix.from_coo((self.shape[1], self.shape[0]), self.indices, self.row_ids(), self.data)
            t._transpose = self
            self._transpose = t
        return self._transpose

    @property
    def T(self) -> "CSRMatrix":
        return self.transpose()

    def todense(self) -> np.ndarray:
        out = np.zeros(self.shape, dtype=np.float64)
        out[self.row_ids(), self.indices] = self.data
        return out

    def row_sums(self) -> np.ndarray:
        sums = np.zeros(self.shape[0], dtype=np.float64)
        np.add.at(sums, self.row_ids(), self.data)
        return sums

    def dot(self, dense) -> np.ndarray:
        """Plain sparse @ dense product on arrays (no tape)."""
        dense = np.asarray(dense, dtype=np.float64)
        if dense.ndim != 2 or dense.shape[0] != self.shape[1]:
            raise ShapeError(f"spmm: sparse {self.shape} x dense {dense.shape}")
        return _kernels.spmm(self.indptr, self.indices, self.data, dense, self.shape[0])

    def __repr__(self):
        return f"CSRMatrix(shape={self.shape}, nnz={self.nnz})"
