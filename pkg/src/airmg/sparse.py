"""Compressed sparse row storage and the kernels shared by the whole solver stack.

Matrices are immutable after construction and always kept in canonical CSR
form: row offsets non-decreasing, column indices strictly increasing within
each row, no duplicate entries, no NaN/inf values.  Explicit zeros are legal
stored entries; ``spgemm`` retains zeros produced by cancellation so that
sparsity patterns stay composable, and only ``drop_and_lump`` removes
entries.  All indices are 0-based 64-bit integers.
"""

import io
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as _spsparse

__all__ = [
    'SparseMatrix',
    'validate',
    'spmv',
    'spgemm',
    'spgemm_fixed_sparsity',
    'extract',
    'drop_and_lump',
    'transpose',
    'diagonal',
    'read_matrix_market',
    'write_matrix_market',
]

_INDEX = np.int64
_VALUE = np.float64


def _as_offsets(arr):
    return np.ascontiguousarray(arr, dtype=_INDEX)


def _as_values(arr):
    return np.ascontiguousarray(arr, dtype=_VALUE)


@dataclass(frozen=True, eq=False)
class SparseMatrix:
    """Real sparse matrix in canonical CSR form.

    Attributes
    ----------
    nrows, ncols : int
        Matrix dimensions.
    row_offsets : ndarray (int64, length nrows+1)
        Start of each row in ``col_indices``/``values``.
    col_indices : ndarray (int64)
        Column index of each stored entry, strictly increasing per row.
    values : ndarray (float64)
        Stored entry values; explicit zeros are permitted.
    """

    nrows: int
    ncols: int
    row_offsets: np.ndarray
    col_indices: np.ndarray
    values: np.ndarray

    @classmethod
    def csr(cls, nrows, ncols, row_offsets, col_indices, values, check=True):
        """Build from CSR arrays, validating canonical form unless ``check=False``."""
        A = cls(int(nrows), int(ncols), _as_offsets(row_offsets),
                _as_offsets(col_indices), _as_values(values))
        if check:
            validate(A)
        return A

    @classmethod
    def from_coo(cls, nrows, ncols, rows, cols, values):
        """Build from coordinate triplets; sorts entries and sums duplicates."""
        rows = _as_offsets(rows)
        cols = _as_offsets(cols)
        values = _as_values(values)
        if not (len(rows) == len(cols) == len(values)):
            raise ValueError('coordinate arrays must have equal length')
        if len(rows) and (rows.min() < 0 or rows.max() >= nrows
                          or cols.min() < 0 or cols.max() >= ncols):
            raise ValueError('coordinate entry out of range')
        order = np.lexsort((cols, rows))
        rows, cols, values = rows[order], cols[order], values[order]
        if len(rows):
            new = np.empty(len(rows), dtype=bool)
            new[0] = True
            new[1:] = (rows[1:] != rows[:-1]) | (cols[1:] != cols[:-1])
            starts = np.flatnonzero(new)
            values = np.add.reduceat(values, starts)
            rows, cols = rows[starts], cols[starts]
        offsets = np.zeros(nrows + 1, dtype=_INDEX)
        np.cumsum(np.bincount(rows, minlength=nrows), out=offsets[1:])
        return cls.csr(nrows, ncols, offsets, cols, values, check=False)

    @classmethod
    def from_dense(cls, arr):
        """Build from a dense array, storing only nonzero entries."""
        arr = np.asarray(arr, dtype=_VALUE)
        if arr.ndim != 2:
            raise ValueError('expected a 2-D array')
        rows, cols = np.nonzero(arr)
        return cls.from_coo(arr.shape[0], arr.shape[1], rows, cols, arr[rows, cols])

    @classmethod
    def identity(cls, n):
        idx = np.arange(n, dtype=_INDEX)
        offsets = np.arange(n + 1, dtype=_INDEX)
        return cls(n, n, offsets, idx, np.ones(n, dtype=_VALUE))

    @classmethod
    def _from_scipy(cls, m):
        """Wrap a scipy CSR result, re-sorting rows if the kernel left them unsorted."""
        m = m.tocsr()
        offsets = _as_offsets(m.indptr)
        cols = _as_offsets(m.indices)
        vals = _as_values(m.data)
        row_of = np.repeat(np.arange(m.shape[0], dtype=_INDEX), np.diff(offsets))
        if len(cols) > 1:
            same = row_of[1:] == row_of[:-1]
            if not np.all(cols[1:][same] > cols[:-1][same]):
                order = np.lexsort((cols, row_of))
                cols, vals = cols[order], vals[order]
        return cls(int(m.shape[0]), int(m.shape[1]), offsets, cols, vals)

    @cached_property
    def _scipy(self):
        m = _spsparse.csr_matrix((self.values, self.col_indices, self.row_offsets),
                                 shape=(self.nrows, self.ncols), copy=False)
        m.has_sorted_indices = True
        return m

    @property
    def nnz(self):
        return int(self.row_offsets[-1])

    def to_dense(self):
        out = np.zeros((self.nrows, self.ncols), dtype=_VALUE)
        row_of = _row_index(self)
        out[row_of, self.col_indices] = self.values
        return out

    def row(self, i):
        """Column indices and values of row ``i`` (views, do not modify)."""
        lo, hi = self.row_offsets[i], self.row_offsets[i + 1]
        return self.col_indices[lo:hi], self.values[lo:hi]

    def __repr__(self):
        return f'SparseMatrix({self.nrows}x{self.ncols}, nnz={self.nnz})'


def _row_index(A):
    """Row index of each stored entry."""
    return np.repeat(np.arange(A.nrows, dtype=_INDEX), np.diff(A.row_offsets))


def _segment_max(values, row_offsets, nrows, empty=0.0):
    """Per-row maximum of ``values``; rows without entries get ``empty``.

    Empty rows may be interleaved: their zero-length ranges contribute no
    elements to the reduceat segments of the surrounding non-empty rows.
    """
    out = np.full(nrows, empty, dtype=_VALUE)
    lens = np.diff(row_offsets)
    nz = lens > 0
    if np.any(nz):
        out[nz] = np.maximum.reduceat(values, row_offsets[:-1][nz])
    return out


def _entry_keys(A):
    """Row-major linear keys of the stored entries (strictly increasing)."""
    if A.ncols == 0 or A.nnz == 0:
        return np.zeros(0, dtype=_INDEX)
    if A.nrows > (2**62) // A.ncols:
        raise ValueError('matrix too large for linear entry keys')
    return _row_index(A) * _INDEX(A.ncols) + A.col_indices


def validate(A):
    """Check the canonical-form invariants, raising ``ValueError`` on violation."""
    offs, cols, vals = A.row_offsets, A.col_indices, A.values
    if A.nrows < 0 or A.ncols < 0:
        raise ValueError('negative dimension')
    if len(offs) != A.nrows + 1:
        raise ValueError('row_offsets has wrong length')
    if offs[0] != 0 or offs[-1] != len(cols) or len(cols) != len(vals):
        raise ValueError('row_offsets endpoints inconsistent with entry arrays')
    if np.any(np.diff(offs) < 0):
        raise ValueError('row_offsets must be non-decreasing')
    if len(cols):
        if cols.min() < 0 or cols.max() >= A.ncols:
            raise ValueError('column index out of range')
        row_of = _row_index(A)
        same = row_of[1:] == row_of[:-1]
        if not np.all(cols[1:][same] > cols[:-1][same]):
            raise ValueError('column indices must be strictly increasing within rows')
    if len(vals) and not np.all(np.isfinite(vals)):
        raise ValueError('stored values must be finite')
    return A


def spmv(A, x):
    """Sparse matrix-vector product ``A @ x``."""
    x = np.asarray(x, dtype=_VALUE)
    if x.ndim != 1 or len(x) != A.ncols:
        raise ValueError(f'vector of length {len(x)} incompatible with '
                         f'{A.nrows}x{A.ncols} matrix')
    return A._scipy @ x


def _pattern_matrix(A):
    """scipy CSR holding 1.0 at every stored position of ``A``."""
    return _spsparse.csr_matrix(
        (np.ones(A.nnz, dtype=_VALUE), A.col_indices, A.row_offsets),
        shape=(A.nrows, A.ncols), copy=False)


def spgemm(A, B):
    """Sparse matrix-matrix product with the exact structural pattern.

    Entries of the structural product that cancel to zero numerically are
    retained as explicit zeros; use ``drop_and_lump`` to remove entries.
    """
    if A.ncols != B.nrows:
        raise ValueError(f'cannot multiply {A.nrows}x{A.ncols} by {B.nrows}x{B.ncols}')
    # The numeric kernel prunes cancellation zeros, so take the pattern from a
    # counting product (all contributions positive) and align values onto it.
    pattern = SparseMatrix._from_scipy(_pattern_matrix(A) @ _pattern_matrix(B))
    numeric = SparseMatrix._from_scipy(A._scipy @ B._scipy)
    if numeric.nnz == pattern.nnz:
        return numeric
    vals = np.zeros(pattern.nnz, dtype=_VALUE)
    pos = np.searchsorted(_entry_keys(pattern), _entry_keys(numeric))
    vals[pos] = numeric.values
    return SparseMatrix(pattern.nrows, pattern.ncols, pattern.row_offsets,
                        pattern.col_indices, vals)


def spgemm_fixed_sparsity(A, B, pattern):
    """Product ``A @ B`` restricted to the stored positions of ``pattern``.

    Entries of the true product outside the pattern are discarded, not lumped.
    """
    if A.ncols != B.nrows:
        raise ValueError(f'cannot multiply {A.nrows}x{A.ncols} by {B.nrows}x{B.ncols}')
    if pattern.nrows != A.nrows or pattern.ncols != B.ncols:
        raise ValueError('pattern shape must match the product shape')
    prod = spgemm(A, B)
    keep = np.zeros(prod.nnz, dtype=bool)
    pat_keys = _entry_keys(pattern)
    prod_keys = _entry_keys(prod)
    pos = np.searchsorted(pat_keys, prod_keys)
    inside = pos < len(pat_keys)
    keep[inside] = pat_keys[pos[inside]] == prod_keys[inside]
    row_of = _row_index(prod)[keep]
    offsets = np.zeros(prod.nrows + 1, dtype=_INDEX)
    np.cumsum(np.bincount(row_of, minlength=prod.nrows), out=offsets[1:])
    return SparseMatrix(prod.nrows, prod.ncols, offsets,
                        prod.col_indices[keep], prod.values[keep])


def _as_index_set(indices, limit, name):
    idx = _as_offsets(indices)
    if idx.ndim != 1:
        raise ValueError(f'{name} index set must be one-dimensional')
    if len(idx):
        if idx[0] < 0 or idx[-1] >= limit:
            raise ValueError(f'{name} index out of range for dimension {limit}')
        if np.any(np.diff(idx) <= 0):
            raise ValueError(f'{name} index set must be strictly increasing')
    return idx


def extract(A, rows, cols):
    """Submatrix ``A[rows, cols]`` with contiguous renumbered indices.

    ``rows`` and ``cols`` must be strictly increasing index sets into ``A``.
    """
    rows = _as_index_set(rows, A.nrows, 'row')
    cols = _as_index_set(cols, A.ncols, 'column')
    nr, nc = len(rows), len(cols)
    starts = A.row_offsets[rows]
    lens = (A.row_offsets[rows + 1] - starts) if nr else np.zeros(0, dtype=_INDEX)
    total = int(lens.sum())
    if total == 0 or nc == 0:
        return SparseMatrix(nr, nc, np.zeros(nr + 1, dtype=_INDEX),
                            np.zeros(0, dtype=_INDEX), np.zeros(0, dtype=_VALUE))
    gather = (np.arange(total, dtype=_INDEX)
              - np.repeat(np.cumsum(lens) - lens, lens)
              + np.repeat(starts, lens))
    g_cols = A.col_indices[gather]
    member = np.zeros(A.ncols, dtype=bool)
    member[cols] = True
    keep = member[g_cols]
    colmap = np.zeros(A.ncols, dtype=_INDEX)
    colmap[cols] = np.arange(nc, dtype=_INDEX)
    g_rows = np.repeat(np.arange(nr, dtype=_INDEX), lens)[keep]
    offsets = np.zeros(nr + 1, dtype=_INDEX)
    np.cumsum(np.bincount(g_rows, minlength=nr), out=offsets[1:])
    return SparseMatrix(nr, nc, offsets, colmap[g_cols[keep]], A.values[gather][keep])


def drop_and_lump(A, rel_tol, lump):
    """Drop small off-diagonal entries, optionally lumping them onto the diagonal.

    An off-diagonal entry is dropped when ``|a_ij| < rel_tol * max_k |a_ik]``
    (row-relative threshold).  Diagonal entries are never dropped.  With
    ``lump=True`` each dropped value is added to the row's diagonal, which
    preserves row sums; a diagonal entry is inserted if a row lumps mass but
    stores none.
    """
    if rel_tol < 0:
        raise ValueError('rel_tol must be non-negative')
    if lump and A.nrows != A.ncols:
        raise ValueError('lumping requires a square matrix')
    if rel_tol == 0 or A.nnz == 0:
        return A
    row_of = _row_index(A)
    absv = np.abs(A.values)
    rowmax = _segment_max(absv, A.row_offsets, A.nrows)
    is_diag = A.col_indices == row_of
    keep = is_diag | (absv >= rel_tol * rowmax[row_of])
    if np.all(keep):
        return A
    if not lump:
        offsets = np.zeros(A.nrows + 1, dtype=_INDEX)
        np.cumsum(np.bincount(row_of[keep], minlength=A.nrows), out=offsets[1:])
        return SparseMatrix(A.nrows, A.ncols, offsets,
                            A.col_indices[keep], A.values[keep])
    dropped = ~keep
    lumped = np.bincount(row_of[dropped], weights=A.values[dropped],
                         minlength=A.nrows)
    vals = A.values[keep].copy()
    cols = A.col_indices[keep]
    rows = row_of[keep]
    diag_pos = cols == rows
    has_diag = np.zeros(A.nrows, dtype=bool)
    has_diag[rows[diag_pos]] = True
    vals[diag_pos] += lumped[rows[diag_pos]]
    need_insert = np.flatnonzero(~has_diag & (lumped != 0))
    if len(need_insert):
        rows = np.concatenate([rows, need_insert])
        cols = np.concatenate([cols, need_insert])
        vals = np.concatenate([vals, lumped[need_insert]])
        return SparseMatrix.from_coo(A.nrows, A.ncols, rows, cols, vals)
    offsets = np.zeros(A.nrows + 1, dtype=_INDEX)
    np.cumsum(np.bincount(rows, minlength=A.nrows), out=offsets[1:])
    return SparseMatrix(A.nrows, A.ncols, offsets, cols, vals)


def transpose(A):
    """Transpose in canonical CSR form."""
    return SparseMatrix._from_scipy(A._scipy.T.tocsr())


def diagonal(A):
    """Main diagonal as a dense vector; structurally missing entries are 0."""
    n = min(A.nrows, A.ncols)
    out = np.zeros(n, dtype=_VALUE)
    row_of = _row_index(A)
    hit = (A.col_indices == row_of) & (row_of < n)
    out[row_of[hit]] = A.values[hit]
    return out


def write_matrix_market(A, path):
    """Write in Matrix Market coordinate real general format.

    Values are printed with 17 significant digits so a read/write round trip
    reproduces every float64 exactly.
    """
    row_of = _row_index(A)
    with open(path, 'w') as fh:
        fh.write('%%MatrixMarket matrix coordinate real general\n')
        fh.write(f'{A.nrows} {A.ncols} {A.nnz}\n')
        for i, j, v in zip(row_of, A.col_indices, A.values):
            fh.write(f'{i + 1} {j + 1} {v:.16e}\n')


def read_matrix_market(path):
    """Read a Matrix Market coordinate real general file."""
    with open(path) as fh:
        banner = fh.readline().split()
        if (len(banner) != 5 or banner[0] != '%%MatrixMarket'
                or [t.lower() for t in banner[1:]] != ['matrix', 'coordinate',
                                                       'real', 'general']):
            raise ValueError('expected a "matrix coordinate real general" file')
        line = fh.readline()
        while line.startswith('%'):
            line = fh.readline()
        dims = line.split()
        if len(dims) != 3:
            raise ValueError('malformed size line')
        nrows, ncols, nnz = (int(t) for t in dims)
        if nnz == 0:
            body = np.zeros((0, 3))
        else:
            body = np.loadtxt(io.StringIO(fh.read()), dtype=_VALUE,
                              comments='%', ndmin=2)
    if body.size == 0:
        body = body.reshape(0, 3)
    if body.shape[0] != nnz or (nnz and body.shape[1] != 3):
        raise ValueError('entry count does not match the size line')
    rows = body[:, 0].astype(_INDEX) - 1
    cols = body[:, 1].astype(_INDEX) - 1
    return SparseMatrix.from_coo(nrows, ncols, rows, cols, body[:, 2])
