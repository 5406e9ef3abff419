"""Hop distillation: per-hop "new neighbor" matrices and their fusion.

``build_hopset`` splits an adjacency into *pure* hop matrices: the support
of hop ``i`` is exactly the node pairs at shortest-path distance ``i``.
Cumulative reachability (pairs within ``<= i`` hops) is grown one boolean
product per hop — never by repeated squaring — and each hop's new entries
are the set difference against the previous ball.  Diagonals are stripped
from every pure hop: a node is not its own new neighbor; self-information
re-enters only through self-loop-aware normalization downstream.

``fuse_hops`` combines the (optionally masked) pure hops into one
propagation operator with softmax hop weights.  Normalization placement is
configurable:

* ``per_hop`` (default) — each hop operator is degree-normalized before
  weighting, so the weights purely encode relative hop importance;
* ``fused``   — normalize once after the weighted sum;
* ``none``    — raw binary hops, weighted.

Hop sets are persisted in a little-endian binary cache (magic
``SGNNHOPS``) so training and sweep runs skip the expensive build:
header = magic, u64 version, u64 n, u64 K, u64 normalization code,
u64 matrix count, 32-byte SHA-256 of the source edge list; then per matrix
u64 kind, u64 order, u64 nnz, (n+1) u64 row offsets, nnz u64 column
indices, nnz f64 values.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import DataError, InputError, MissingFileError
from .sparse import SparseMatrix, sym_normalize

__all__ = [
    "HopSet",
    "HopWeights",
    "build_hopset",
    "softmax_weights",
    "fuse_hops",
    "save_hop_cache",
    "load_hop_cache",
    "edge_list_hash",
    "NORM_MODES",
]

NORM_MODES = ("per_hop", "fused", "none")

_MAGIC = b"SGNNHOPS"
_VERSION = 1
_KIND_PURE = 1
_KIND_TWO_HOP = 2

_BLOCK_ROWS = 1024  # row-block size: bounds the expansion's transient memory


@dataclass
class HopWeights:
    """Raw hop logits and their softmax image (positive, sums to 1)."""

    logits: np.ndarray
    alpha: np.ndarray


@dataclass
class HopSet:
    """Pure hop matrices plus the companions training needs.

    ``pure[i-1]`` holds hop ``i``; supports are pairwise disjoint and
    diagonal-free.  ``two_hop`` is the raw <=2-hop reachability (diagonal
    included) that feeds the local branch, present for every K.
    ``cumulative`` is kept when built in-memory and dropped (None) on the
    memory-lean path used for large-graph pre-computation; nothing
    downstream of the property checks needs it.  Treat instances as
    immutable after construction.
    """

    K: int
    n: int
    pure: list[SparseMatrix]
    two_hop: SparseMatrix
    cumulative: list[SparseMatrix] | None = None
    norm_mode: str = "per_hop"
    _normalized: list[SparseMatrix] | None = field(default=None, repr=False)

    @property
    def normalized_pure(self) -> list[SparseMatrix]:
        """Per-hop normalized pure matrices (no self-loops), computed lazily."""
        if self._normalized is None:
            self._normalized = [sym_normalize(p) for p in self.pure]
        return self._normalized


def _require_simple_symmetric(adj: SparseMatrix) -> None:
    if np.any(adj.row_ids() == adj.col_indices.astype(np.int64)):
        raise InputError("adjacency must be diagonal-free for hop distillation")
    s = adj.to_scipy().astype(np.int8)
    if (s != s.T).nnz != 0:
        raise InputError("adjacency must be symmetric")


def _canon_block(m: sp.csr_matrix) -> sp.csr_matrix:
    m.sum_duplicates()
    m.eliminate_zeros()
    m.sort_indices()
    return m


def _strip_block_diagonal(m: sp.csr_matrix, row_lo: int) -> sp.csr_matrix:
    """Remove (i, i) entries from a row block whose rows start at row_lo."""
    counts = np.diff(m.indptr)
    rows = np.repeat(np.arange(m.shape[0], dtype=np.int32), counts)
    keep = m.indices != rows + row_lo
    if keep.all():
        return m
    data = np.ones(int(keep.sum()), dtype=np.int8)
    out = sp.csr_matrix(
        (data, (rows[keep], m.indices[keep])), shape=m.shape
    )
    return _canon_block(out)


class _HopAccumulator:
    """Collects per-hop row blocks and assembles one square CSR at the end."""

    def __init__(self, n: int):
        self.n = n
        self.col_chunks: list[np.ndarray] = []
        self.count_chunks: list[np.ndarray] = []

    def add(self, block: sp.csr_matrix) -> None:
        self.col_chunks.append(block.indices.astype(np.int32, copy=False))
        self.count_chunks.append(np.diff(block.indptr).astype(np.int64))

    def build(self) -> SparseMatrix:
        total = sum(c.shape[0] for c in self.col_chunks)
        cols = np.empty(total, dtype=np.int32)
        pos = 0
        while self.col_chunks:  # copy then free chunk by chunk to cap the peak
            chunk = self.col_chunks.pop(0)
            cols[pos : pos + chunk.shape[0]] = chunk
            pos += chunk.shape[0]
        counts = (
            np.concatenate(self.count_chunks)
            if self.count_chunks
            else np.zeros(self.n, dtype=np.int64)
        )
        if counts.shape[0] != self.n:
            raise InputError("accumulated row blocks do not cover the matrix")
        offsets = np.zeros(self.n + 1, dtype=np.int64)
        np.cumsum(counts, out=offsets[1:])
        self.count_chunks.clear()
        return SparseMatrix(
            self.n, offsets, cols, np.ones(total, dtype=np.int8)
        )


def build_hopset(
    adj: SparseMatrix,
    K: int,
    norm_mode: str = "per_hop",
    keep_cumulative: bool = True,
    block_rows: int = _BLOCK_ROWS,
) -> HopSet:
    """Distill ``adj`` into pure hop matrices 1..K plus 2-hop reachability.

    Reachability balls are expanded row-block by row-block: each block's
    frontier (its exact hop-(i-1) pairs) is multiplied with the adjacency,
    already-reached pairs are subtracted, and the diagonal stripped.  Rows
    are independent, so this equals the whole-matrix union/difference
    construction entry for entry while bounding peak memory.
    """
    if K < 1:
        raise InputError(f"hop count must be >= 1, got {K}")
    if norm_mode not in NORM_MODES:
        raise InputError(f"unknown normalization mode {norm_mode!r}")
    _require_simple_symmetric(adj)

    n = adj.n
    A = adj.to_scipy().astype(bool)
    depth = max(K, 2)  # two-hop reachability is needed even for K=1

    pure_acc = [_HopAccumulator(n) for _ in range(depth)]
    two_hop_acc = _HopAccumulator(n)
    cum_acc = [_HopAccumulator(n) for _ in range(depth)] if keep_cumulative else None

    for lo in range(0, max(n, 1), block_rows):
        hi = min(lo + block_rows, n)
        base = _canon_block(A[lo:hi].astype(np.int8))
        pure_acc[0].add(base)
        cum = base
        frontier = base
        if cum_acc is not None:
            cum_acc[0].add(cum)
        for i in range(2, depth + 1):
            nxt = (frontier.astype(bool) @ A).astype(np.int8)
            new = _canon_block(nxt - nxt.multiply(cum))
            cum = _canon_block(cum.maximum(new))
            new = _strip_block_diagonal(new, lo)
            pure_acc[i - 1].add(new)
            if cum_acc is not None:
                cum_acc[i - 1].add(cum)
            if i == 2:
                two_hop_acc.add(cum)
            frontier = new

    pure = [acc.build() for acc in pure_acc]
    two_hop = two_hop_acc.build()
    cumulative = [acc.build() for acc in cum_acc] if cum_acc is not None else None
    return HopSet(
        K=K,
        n=n,
        pure=pure[:K],
        two_hop=two_hop,
        cumulative=cumulative[:K] if cumulative is not None else None,
        norm_mode=norm_mode,
    )


def build_hop_cache_streaming(
    adj: SparseMatrix,
    K: int,
    norm_mode: str,
    path,
    edge_hash: bytes,
    block_rows: int = _BLOCK_ROWS,
) -> list[int]:
    """Build the hop cache directly on disk without holding the hop set.

    Identical recurrence to :func:`build_hopset`, but each block's column
    indices are appended to per-hop spill files and the final cache is
    assembled by streaming them back.  Peak memory stays at block-transient
    scale, which is what makes deep-hop pre-computation on graphs whose
    reachability approaches density feasible in a few hundred MB.  Returns
    the per-hop nnz (pure hops 1..K, then the two-hop matrix).
    """
    import os
    import tempfile

    if K < 1:
        raise InputError(f"hop count must be >= 1, got {K}")
    if norm_mode not in NORM_MODES:
        raise InputError(f"unknown normalization mode {norm_mode!r}")
    _require_simple_symmetric(adj)
    n = adj.n
    A = adj.to_scipy().astype(bool)
    depth = max(K, 2)
    slots = depth + 1  # pure hops 1..depth, then two-hop reachability
    counts = np.zeros((slots, n), dtype=np.int64)
    tmp_dir = tempfile.mkdtemp(prefix="hopcache_", dir=os.path.dirname(
        os.path.abspath(path)) or None)
    spools = [open(os.path.join(tmp_dir, f"slot{s}.i32"), "wb") for s in range(slots)]

    def spill(slot: int, block: sp.csr_matrix, lo: int, hi: int) -> None:
        block.indices.astype(np.int32, copy=False).tofile(spools[slot])
        counts[slot, lo:hi] = np.diff(block.indptr)

    try:
        for lo in range(0, max(n, 1), block_rows):
            hi = min(lo + block_rows, n)
            base = _canon_block(A[lo:hi].astype(np.int8))
            spill(0, base, lo, hi)
            cum = base
            frontier = base
            for i in range(2, depth + 1):
                nxt = (frontier.astype(bool) @ A).astype(np.int8)
                new = _canon_block(nxt - nxt.multiply(cum))
                cum = _canon_block(cum.maximum(new))
                new = _strip_block_diagonal(new, lo)
                spill(i - 1, new, lo, hi)
                if i == 2:
                    spill(depth, cum, lo, hi)
                frontier = new
        for fh in spools:
            fh.close()

        norm_code = NORM_MODES.index(norm_mode)
        chunk = 1 << 22
        with open(path, "wb") as f:
            f.write(_MAGIC)
            np.array([_VERSION, n, K, norm_code, K + 1], dtype="<u8").tofile(f)
            f.write(edge_hash)
            emit = [(_KIND_PURE, i, i - 1) for i in range(1, K + 1)]
            emit.append((_KIND_TWO_HOP, 2, depth))
            for kind, order, slot in emit:
                nnz = int(counts[slot].sum())
                np.array([kind, order, nnz], dtype="<u8").tofile(f)
                offsets = np.zeros(n + 1, dtype=np.int64)
                np.cumsum(counts[slot], out=offsets[1:])
                offsets.astype("<u8").tofile(f)
                with open(os.path.join(tmp_dir, f"slot{slot}.i32"), "rb") as src:
                    while True:
                        piece = np.fromfile(src, dtype=np.int32, count=chunk)
                        if piece.shape[0] == 0:
                            break
                        piece.astype("<u8").tofile(f)
                ones = np.ones(min(chunk, max(nnz, 1)), dtype="<f8")
                written = 0
                while written < nnz:
                    take = min(chunk, nnz - written)
                    ones[:take].tofile(f)
                    written += take
        return [int(counts[s].sum()) for s in list(range(K)) + [depth]]
    finally:
        for fh in spools:
            if not fh.closed:
                fh.close()
        for s in range(slots):
            p = os.path.join(tmp_dir, f"slot{s}.i32")
            if os.path.exists(p):
                os.unlink(p)
        os.rmdir(tmp_dir)


def softmax_weights(logits) -> HopWeights:
    """Stable softmax over hop logits (max subtracted before exponentiation)."""
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 1 or logits.size < 1:
        raise InputError("logits must be a non-empty 1-D array")
    if not np.all(np.isfinite(logits)):
        raise InputError("logits must be finite")
    shifted = logits - logits.max()
    e = np.exp(shifted)
    return HopWeights(logits=logits.copy(), alpha=e / e.sum())


def effective_hops(hopset: HopSet, masks=None) -> list[SparseMatrix]:
    """Hop matrices entering the fusion: hop 1 as-is, hops >= 2 masked if given."""
    eff = [hopset.pure[0]]
    for i in range(2, hopset.K + 1):
        if masks is not None and i in masks.filters:
            eff.append(masks.filters[i])
        else:
            eff.append(hopset.pure[i - 1])
    return eff


def fuse_hops(hopset: HopSet, w: HopWeights, masks=None) -> SparseMatrix:
    """Weighted combination of the effective hop operators.

    Under ``per_hop`` each effective hop is degree-normalized (no self
    loops) before the weighted sum; ``fused`` normalizes the sum once;
    ``none`` sums the raw binary hops.
    """
    if w.alpha.shape[0] != hopset.K:
        raise InputError(
            f"weight length {w.alpha.shape[0]} does not match K={hopset.K}"
        )
    if masks is not None and masks.max_hop != hopset.K:
        raise InputError("mask state does not cover hops 2..K")
    eff = effective_hops(hopset, masks)
    if hopset.norm_mode == "per_hop":
        terms = [sym_normalize(m) for m in eff]
    else:
        terms = eff
    acc = None
    for a_i, m in zip(w.alpha, terms):
        t = m.to_scipy().astype(np.float64) * a_i
        acc = t if acc is None else acc + t
    acc = _canon_block(acc.tocsr())
    fused = SparseMatrix(
        hopset.n,
        np.asarray(acc.indptr, dtype=np.int64),
        acc.indices,
        np.asarray(acc.data, dtype=np.float64),
    )
    if hopset.norm_mode == "fused":
        fused = sym_normalize(fused)
    return fused


# ----------------------------------------------------------------- cache file


def edge_list_hash(adj: SparseMatrix) -> bytes:
    """SHA-256 of the canonical edge list (n plus sorted (row, col) pairs)."""
    h = hashlib.sha256()
    h.update(np.int64(adj.n).tobytes())
    h.update(adj.row_ids().tobytes())
    h.update(adj.col_indices.astype(np.int64).tobytes())
    return h.digest()


def _write_matrix(f, m: SparseMatrix, kind: int, order: int) -> None:
    np.array([kind, order, m.nnz], dtype="<u8").tofile(f)
    m.row_offsets.astype("<u8").tofile(f)
    chunk = 1 << 22
    for lo in range(0, m.nnz, chunk):
        m.col_indices[lo : lo + chunk].astype("<u8").tofile(f)
    for lo in range(0, m.nnz, chunk):
        m.values[lo : lo + chunk].astype("<f8").tofile(f)


def _read_exact(f, dtype, count) -> np.ndarray:
    out = np.fromfile(f, dtype=dtype, count=count)
    if out.shape[0] != count:
        raise DataError("hop cache truncated")
    return out


def _read_matrix(f, n: int) -> tuple[int, int, SparseMatrix]:
    kind, order, nnz = (int(v) for v in _read_exact(f, "<u8", 3))
    offsets = _read_exact(f, "<u8", n + 1).astype(np.int64)
    cols = _read_exact(f, "<u8", nnz).astype(np.int32)
    values = _read_exact(f, "<f8", nnz)
    if nnz and np.all(values == 1.0):
        values = np.ones(nnz, dtype=np.int8)
    return kind, order, SparseMatrix(n, offsets, cols, values)


def save_hop_cache(path, hopset: HopSet, edge_hash: bytes) -> None:
    norm_code = NORM_MODES.index(hopset.norm_mode)
    with open(path, "wb") as f:
        f.write(_MAGIC)
        np.array(
            [_VERSION, hopset.n, hopset.K, norm_code, hopset.K + 1], dtype="<u8"
        ).tofile(f)
        f.write(edge_hash)
        for i, m in enumerate(hopset.pure, start=1):
            _write_matrix(f, m, _KIND_PURE, i)
        _write_matrix(f, hopset.two_hop, _KIND_TWO_HOP, 2)


def load_hop_cache(path) -> tuple[HopSet, bytes]:
    try:
        f = open(path, "rb")
    except FileNotFoundError:
        raise MissingFileError("hop cache not found", path=str(path)) from None
    with f:
        if f.read(8) != _MAGIC:
            raise DataError("not a hop cache file", path=str(path))
        version, n, K, norm_code, count = (int(v) for v in _read_exact(f, "<u8", 5))
        if version != _VERSION:
            raise DataError(f"unsupported hop cache version {version}", path=str(path))
        if norm_code >= len(NORM_MODES):
            raise DataError("corrupt normalization code", path=str(path))
        edge_hash = f.read(32)
        pure: dict[int, SparseMatrix] = {}
        two_hop = None
        for _ in range(count):
            kind, order, m = _read_matrix(f, n)
            if kind == _KIND_PURE:
                pure[order] = m
            elif kind == _KIND_TWO_HOP:
                two_hop = m
            else:
                raise DataError(f"unknown matrix kind {kind}", path=str(path))
        if two_hop is None or sorted(pure) != list(range(1, K + 1)):
            raise DataError("hop cache incomplete", path=str(path))
    hopset = HopSet(
        K=K,
        n=n,
        pure=[pure[i] for i in range(1, K + 1)],
        two_hop=two_hop,
        cumulative=None,
        norm_mode=NORM_MODES[norm_code],
    )
    return hopset, edge_hash
