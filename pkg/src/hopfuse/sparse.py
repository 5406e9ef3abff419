"""Sparse-matrix kernels over node index spaces.

Everything upstream (hop construction, masking, the model) is built on the
small set of operations here.  The central type is :class:`SparseMatrix`, a
canonical CSR matrix:

* ``row_offsets`` is non-decreasing, starts at 0, ends at ``nnz``;
* column indices are strictly increasing within each row;
* no explicit zeros are stored.

Dense matrices are plain C-contiguous 2-D ``numpy`` arrays (``float64``
unless a speed run opts into ``float32``).

Binary "structure" matrices (adjacency, reachability, set-operation results)
carry ``int8`` ones in ``values`` to keep multi-hop builds on large graphs
inside a few GB of RAM; numeric kernels promote to ``float64``.  Products of
binary matrices are computed in saturating boolean arithmetic, never by
counting walks.

scipy.sparse provides the heavy lifting behind these contracts.  Its kernels
are sequential and deterministic, so results are reproducible bit-for-bit;
all values are immutable after construction and safe to share across threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import InputError

__all__ = [
    "SparseMatrix",
    "csr_from_edges",
    "bool_spmm",
    "support_union",
    "support_minus",
    "sym_normalize",
    "spmm_dense",
    "identity",
    "strip_diagonal",
]


@dataclass(frozen=True, eq=False)
class SparseMatrix:
    """Square CSR matrix over node indices.

    Treated as immutable: no kernel ever writes into a constructed
    instance's arrays.
    """

    n: int
    row_offsets: np.ndarray
    col_indices: np.ndarray
    values: np.ndarray

    @property
    def nnz(self) -> int:
        return int(self.col_indices.shape[0])

    def row_slice(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        """Column indices and values of row ``i`` (views, do not mutate)."""
        lo, hi = self.row_offsets[i], self.row_offsets[i + 1]
        return self.col_indices[lo:hi], self.values[lo:hi]

    def row_ids(self) -> np.ndarray:
        """Row index of every stored entry, aligned with ``col_indices``."""
        counts = np.diff(self.row_offsets)
        return np.repeat(np.arange(self.n, dtype=np.int64), counts)

    def to_scipy(self) -> sp.csr_matrix:
        indptr = self.row_offsets
        if self.col_indices.dtype == np.int32 and self.nnz <= np.iinfo(np.int32).max:
            indptr = indptr.astype(np.int32)
        return sp.csr_matrix(
            (self.values, self.col_indices, indptr), shape=(self.n, self.n)
        )

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.n, self.n), dtype=np.float64)
        out[self.row_ids(), self.col_indices] = self.values.astype(np.float64)
        return out

    def support_keys(self) -> np.ndarray:
        """Stored positions encoded as ``row * n + col`` (sorted)."""
        return self.row_ids() * np.int64(self.n) + self.col_indices.astype(np.int64)

    def validate(self) -> None:
        """Check the canonical-CSR invariants; raise InputError on violation."""
        ro = self.row_offsets
        if ro.shape[0] != self.n + 1 or ro[0] != 0 or ro[-1] != self.nnz:
            raise InputError("row_offsets malformed")
        if np.any(np.diff(ro) < 0):
            raise InputError("row_offsets must be non-decreasing")
        if self.nnz:
            if self.col_indices.min() < 0 or self.col_indices.max() >= self.n:
                raise InputError("column index out of range")
            # strictly increasing inside each row
            d = np.diff(self.col_indices.astype(np.int64))
            row_starts = ro[1:-1]
            interior = np.ones(self.nnz - 1, dtype=bool)
            interior[row_starts[(row_starts > 0) & (row_starts < self.nnz)] - 1] = False
            if np.any(d[interior] <= 0):
                raise InputError("column indices not strictly increasing within a row")
            if np.any(self.values == 0):
                raise InputError("explicit zeros stored")
        if self.values.shape[0] != self.nnz:
            raise InputError("values length mismatch")


def _wrap(m: sp.csr_matrix, binary: bool) -> SparseMatrix:
    """Canonicalize a scipy CSR and wrap it.

    ``binary=True`` coerces values to int8 ones (the matrix is a support
    indicator); otherwise values become float64.
    """
    m.sum_duplicates()
    m.eliminate_zeros()
    m.sort_indices()
    if binary:
        values = np.ones(m.nnz, dtype=np.int8)
    else:
        values = np.asarray(m.data, dtype=np.float64)
    return SparseMatrix(
        n=m.shape[0],
        row_offsets=np.asarray(m.indptr, dtype=np.int64),
        col_indices=m.indices,
        values=values,
    )


def _as_bool(a: SparseMatrix) -> sp.csr_matrix:
    m = a.to_scipy()
    if m.dtype != np.bool_:
        m = m.astype(np.bool_)
    return m


def _as_indicator(a: SparseMatrix) -> sp.csr_matrix:
    """Support indicator with int8 ones (canonical form stores no zeros)."""
    m = a.to_scipy()
    if m.dtype == np.int8:
        return m
    return sp.csr_matrix(
        (np.ones(a.nnz, dtype=np.int8), m.indices, m.indptr), shape=(a.n, a.n)
    )


def _check_same_n(a: SparseMatrix, b: SparseMatrix) -> None:
    if a.n != b.n:
        raise InputError(f"dimension mismatch: {a.n} vs {b.n}")


def identity(n: int) -> SparseMatrix:
    offs = np.arange(n + 1, dtype=np.int64)
    return SparseMatrix(n, offs, np.arange(n, dtype=np.int64), np.ones(n, dtype=np.int8))


def csr_from_edges(edges, n: int, symmetric: bool = False) -> SparseMatrix:
    """Binary adjacency from an edge list.

    Duplicate edges collapse to a single unit entry.  ``symmetric`` stores
    both orientations of every pair.  Self-loops are kept if present in the
    input; none are added.
    """
    if n < 0:
        raise InputError("node count must be non-negative")
    edges = np.asarray(list(edges), dtype=np.int64).reshape(-1, 2)
    if edges.size and (edges.min() < 0 or edges.max() >= n):
        raise InputError(f"edge endpoint out of range for n={n}")
    src, dst = edges[:, 0], edges[:, 1]
    if symmetric:
        src, dst = np.concatenate([src, dst]), np.concatenate([dst, src])
    m = sp.csr_matrix(
        (np.ones(src.shape[0], dtype=np.int8), (src, dst)), shape=(n, n)
    )
    return _wrap(m, binary=True)


def bool_spmm(a: SparseMatrix, b: SparseMatrix) -> SparseMatrix:
    """Boolean matrix product: entry (i, j) present iff some k links i to j.

    Reachability semantics — walk counts are never materialized, so no
    overflow is possible.
    """
    _check_same_n(a, b)
    return _wrap(_as_bool(a) @ _as_bool(b), binary=True)


def support_union(a: SparseMatrix, b: SparseMatrix) -> SparseMatrix:
    """Entries present in either operand, all values 1."""
    _check_same_n(a, b)
    return _wrap(_as_indicator(a).maximum(_as_indicator(b)), binary=True)


def support_minus(a: SparseMatrix, b: SparseMatrix) -> SparseMatrix:
    """Entries present in ``a`` but not in ``b``, all values 1."""
    _check_same_n(a, b)
    ai, bi = _as_indicator(a), _as_indicator(b)
    return _wrap(ai - ai.multiply(bi), binary=True)


def strip_diagonal(a: SparseMatrix) -> SparseMatrix:
    keep = a.row_ids() != a.col_indices.astype(np.int64)
    m = sp.csr_matrix(
        (
            np.ones(int(keep.sum()), dtype=np.int8),
            (a.row_ids()[keep], a.col_indices[keep]),
        ),
        shape=(a.n, a.n),
    )
    return _wrap(m, binary=True)


def sym_normalize(a: SparseMatrix, add_self_loops: bool = False) -> SparseMatrix:
    """Symmetric degree normalization ``D^{-1/2} (A [+ I]) D^{-1/2}``.

    Degrees are row sums taken after the optional self-loop addition.
    Rows (and columns) of degree-0 nodes stay identically zero rather than
    producing NaN.
    """
    m = a.to_scipy().astype(np.float64)
    if add_self_loops:
        m = m + sp.identity(a.n, dtype=np.float64, format="csr")
    m.sum_duplicates()
    m.sort_indices()
    deg = np.asarray(m.sum(axis=1)).ravel()
    with np.errstate(divide="ignore"):
        inv_sqrt = 1.0 / np.sqrt(deg)
    inv_sqrt[~np.isfinite(inv_sqrt)] = 0.0
    counts = np.diff(m.indptr)
    rows = np.repeat(np.arange(a.n), counts)
    data = m.data * inv_sqrt[rows] * inv_sqrt[m.indices]
    out = sp.csr_matrix((data, m.indices, m.indptr), shape=(a.n, a.n))
    return _wrap(out, binary=False)


def spmm_dense(a: SparseMatrix, x: np.ndarray) -> np.ndarray:
    """Sparse x dense product; output has ``a.n`` rows."""
    x = np.asarray(x)
    if x.ndim != 2 or x.shape[0] != a.n:
        raise InputError(
            f"dimension mismatch: operator is {a.n}x{a.n}, dense input is {x.shape}"
        )
    m = a.to_scipy()
    if m.dtype != x.dtype:
        m = m.astype(x.dtype)
    return np.ascontiguousarray(m @ x)
