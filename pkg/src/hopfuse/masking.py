"""Relevance-scored pruning of distant neighbors.

Each stored entry (v, u) of a hop matrix gets a contribution score: the
scaled dot product of the two learned projections of the endpoint features,
softmax-normalized over v's neighborhood within that hop.  Per node and hop,
only the ``m_i`` highest-scoring neighbors are retained; hop 1 is never
pruned.  The retained-edge count feeds the sparsity term of the training
objective and the squared score shortfall feeds the relevance term.

Retention sizes are not differentiable, so they are adjusted by a discrete
outer rule: on a validation plateau, every ``m_i`` (i >= 2) shrinks by a
fixed step down to a floor of 1.

Scores and filters are rebuilt once per epoch from the current projections.
Score computation and filtering are row-independent and deterministic; a
mask state is immutable between rebuilds.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InputError
from .sparse import SparseMatrix

__all__ = [
    "UNLIMITED",
    "MaskState",
    "RetentionSchedule",
    "neighbor_scores",
    "top_m_filter",
    "retained_edge_count",
    "relevance_penalty",
    "update_retention",
    "build_mask_state",
    "scores_backward",
]

UNLIMITED = -1  # retention sentinel: keep every neighbor (hop 1 only)

_SDDMM_CHUNK = 1 << 18


@dataclass
class MaskState:
    """Per-hop scores, retained-entry flags and filtered adjacencies.

    Dict keys are hop indices 2..max_hop.  ``retained[i]`` is a boolean
    array aligned with ``scores[i]``'s stored entries; ``filters[i]`` holds
    the same kept entries as a binary canonical matrix.
    """

    max_hop: int
    scores: dict[int, SparseMatrix] = field(default_factory=dict)
    retained: dict[int, np.ndarray] = field(default_factory=dict)
    filters: dict[int, SparseMatrix] = field(default_factory=dict)
    retained_counts: dict[int, np.ndarray] = field(default_factory=dict)


@dataclass(frozen=True)
class RetentionSchedule:
    """Per-hop retention sizes and the rule that updates them.

    ``m[0]`` is the hop-1 sentinel (UNLIMITED); entries for hops >= 2 are
    positive.  ``rule`` is ``fixed`` or ``shrink_on_plateau``.
    """

    m: np.ndarray
    rule: str = "fixed"
    patience: int = 20
    step: int = 1
    floor: int = 1
    last_shrink_epoch: int = -1

    def __post_init__(self):
        m = np.asarray(self.m, dtype=np.int64)
        object.__setattr__(self, "m", m)
        if self.rule not in ("fixed", "shrink_on_plateau"):
            raise InputError(f"unknown retention rule {self.rule!r}")
        if m.shape[0] >= 2 and np.any(m[1:] < 1):
            raise InputError("retention sizes for hops >= 2 must be >= 1")

    @classmethod
    def uniform(cls, K: int, m_init: int, **kw) -> "RetentionSchedule":
        m = np.full(K, int(m_init), dtype=np.int64)
        m[0] = UNLIMITED
        return cls(m=m, **kw)


def _check_projection_shapes(x, w1, w2):
    if w1.ndim != 2 or w2.ndim != 2 or w1.shape != w2.shape:
        raise InputError("projection matrices must share shape (d_f, f)")
    if x.ndim != 2 or x.shape[1] != w1.shape[1]:
        raise InputError(
            f"feature dim {x.shape} incompatible with projections {w1.shape}"
        )


def _entry_dots(p: np.ndarray, q: np.ndarray, rows: np.ndarray, cols: np.ndarray):
    """Dot products p[row] . q[col] per stored entry, chunked."""
    out = np.empty(rows.shape[0], dtype=np.float64)
    for lo in range(0, rows.shape[0], _SDDMM_CHUNK):
        hi = lo + _SDDMM_CHUNK
        out[lo:hi] = np.einsum("ij,ij->i", p[rows[lo:hi]], q[cols[lo:hi]])
    return out


def _row_reduce(ufunc, values, offsets, init):
    """Per-row reduction of entry values for a CSR layout."""
    n = offsets.shape[0] - 1
    out = np.full(n, init, dtype=np.float64)
    starts = offsets[:-1]
    nonempty = offsets[1:] > starts
    if values.shape[0]:
        out[nonempty] = ufunc.reduceat(values, starts[nonempty])
    return out


def neighbor_scores(
    x: np.ndarray, w1: np.ndarray, w2: np.ndarray, hop_adj: SparseMatrix
) -> SparseMatrix:
    """Softmax-normalized relevance of each stored neighbor, per row.

    Score(v, u) = softmax over row v of (w1 x_v) . (w2 x_u) / sqrt(d_f).
    Rows with no stored entries stay empty; every other row sums to 1.
    """
    _check_projection_shapes(x, w1, w2)
    if x.shape[0] != hop_adj.n:
        raise InputError("feature row count does not match graph size")
    d_f = w1.shape[0]
    p = x @ w1.T
    q = x @ w2.T
    rows = hop_adj.row_ids()
    logits = _entry_dots(p, q, rows, hop_adj.col_indices) / np.sqrt(d_f)
    offsets = hop_adj.row_offsets
    # non-finite inputs propagate to a non-finite loss, reported upstream
    with np.errstate(invalid="ignore", over="ignore"):
        row_max = _row_reduce(np.maximum, logits, offsets, -np.inf)
        e = np.exp(logits - row_max[rows])
        row_sum = _row_reduce(np.add, e, offsets, 0.0)
        vals = e / row_sum[rows]
    return SparseMatrix(hop_adj.n, offsets.copy(), hop_adj.col_indices.copy(), vals)


def _top_m_select(hop_adj: SparseMatrix, score_values: np.ndarray, m: int):
    """Kept-entry mask for per-row top-m by (score desc, column asc)."""
    nnz = hop_adj.nnz
    if score_values.shape[0] != nnz:
        raise InputError("scores are not aligned with the hop support")
    if m == UNLIMITED:
        return np.ones(nnz, dtype=bool)
    if m < 1:
        raise InputError("retention size must be >= 1")
    rows = hop_adj.row_ids()
    order = np.lexsort((hop_adj.col_indices, -score_values, rows))
    rank_in_row = np.arange(nnz, dtype=np.int64) - hop_adj.row_offsets[rows[order]]
    kept = np.zeros(nnz, dtype=bool)
    kept[order[rank_in_row < m]] = True
    return kept


def _filter_from_mask(hop_adj: SparseMatrix, kept: np.ndarray) -> SparseMatrix:
    rows = hop_adj.row_ids()[kept]
    counts = np.bincount(rows, minlength=hop_adj.n).astype(np.int64)
    offsets = np.zeros(hop_adj.n + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    cols = hop_adj.col_indices[kept]
    return SparseMatrix(hop_adj.n, offsets, cols, np.ones(cols.shape[0], dtype=np.int8))


def top_m_filter(hop_adj: SparseMatrix, scores: SparseMatrix, m: int) -> SparseMatrix:
    """Keep the ``m`` highest-scoring entries of every row (all, if fewer).

    Ties break toward the smaller column index.  Output values are 1; any
    weighting happens at normalization time.
    """
    kept = _top_m_select(hop_adj, scores.values, m)
    return _filter_from_mask(hop_adj, kept)


def build_mask_state(
    x: np.ndarray, w1: np.ndarray, w2: np.ndarray, hopset, schedule: RetentionSchedule
) -> MaskState:
    """Score and filter every hop >= 2 of ``hopset`` with the current projections."""
    if schedule.m.shape[0] != hopset.K:
        raise InputError("retention schedule length does not match K")
    state = MaskState(max_hop=hopset.K)
    for i in range(2, hopset.K + 1):
        hop = hopset.pure[i - 1]
        scores = neighbor_scores(x, w1, w2, hop)
        kept = _top_m_select(hop, scores.values, int(schedule.m[i - 1]))
        state.scores[i] = scores
        state.retained[i] = kept
        state.filters[i] = _filter_from_mask(hop, kept)
        state.retained_counts[i] = np.diff(state.filters[i].row_offsets)
    return state


def retained_edge_count(mask: MaskState) -> int:
    """Total entries surviving the per-hop filters (hops 2..K)."""
    return int(sum(m.nnz for m in mask.filters.values()))


def relevance_penalty(mask: MaskState) -> float:
    """Sum of squared score shortfalls (1 - score)^2 over retained entries."""
    total = 0.0
    for i, scores in mask.scores.items():
        kept = mask.retained[i]
        total += float(np.sum((1.0 - scores.values[kept]) ** 2))
    return total


def update_retention(schedule: RetentionSchedule, val_history) -> RetentionSchedule:
    """Shrink retention sizes when the validation metric has plateaued.

    A plateau means no strict improvement over the running best for
    ``patience`` epochs, with at least ``patience`` epochs since the last
    shrink so sizes step down rather than free-fall.
    """
    val_history = list(val_history)
    if not val_history:
        raise InputError("history must be non-empty")
    if schedule.rule == "fixed":
        return schedule
    epoch = len(val_history) - 1
    best = np.maximum.accumulate(val_history)
    strict = [0] + [
        i for i in range(1, len(val_history)) if val_history[i] > best[i - 1]
    ]
    last_improve = strict[-1]
    if epoch - last_improve < schedule.patience:
        return schedule
    if epoch - schedule.last_shrink_epoch < schedule.patience:
        return schedule
    new_m = schedule.m.copy()
    new_m[1:] = np.maximum(schedule.floor, new_m[1:] - schedule.step)
    if np.array_equal(new_m, schedule.m):
        return replace(schedule, last_shrink_epoch=epoch)
    return replace(schedule, m=new_m, last_shrink_epoch=epoch)


def dump_mask_tsv(mask: MaskState, directory) -> list:
    """Diagnostic dump: one TSV per hop with (node, neighbor, score, retained)."""
    from pathlib import Path

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    for i in sorted(mask.scores):
        scores = mask.scores[i]
        kept = mask.retained[i]
        path = directory / f"mask_hop{i}.tsv"
        with open(path, "w") as fh:
            fh.write("node\tneighbor\tscore\tretained\n")
            rows = scores.row_ids()
            for e in range(scores.nnz):
                fh.write(
                    f"{rows[e]}\t{scores.col_indices[e]}\t{scores.values[e]!r}\t"
                    f"{int(kept[e])}\n"
                )
        written.append(path)
    return written


def scores_backward(
    x: np.ndarray,
    w1: np.ndarray,
    w2: np.ndarray,
    hop_adj: SparseMatrix,
    scores: SparseMatrix,
    dscore_values: np.ndarray,
):
    """Gradients of a loss w.r.t. the two projections through the scores.

    ``dscore_values`` is aligned with the stored score entries (zeros where
    the loss does not touch an entry).  The softmax Jacobian is applied per
    row over the full pre-filter support.
    """
    d_f = w1.shape[0]
    s = scores.values
    rows = scores.row_ids()
    weighted = s * dscore_values
    row_dot = _row_reduce(np.add, weighted, scores.row_offsets, 0.0)
    dlogits = s * (dscore_values - row_dot[rows])
    scale = 1.0 / np.sqrt(d_f)
    p = x @ w1.T
    q = x @ w2.T
    grad_entries = scores.to_scipy().astype(np.float64)
    grad_entries.data = dlogits
    dp = scale * (grad_entries @ q)
    dq = scale * (grad_entries.T @ p)
    return dp.T @ x, dq.T @ x
