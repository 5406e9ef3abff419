"""Joint objective, exact gradients, optimizer and the training loop.

The objective is the mean cross-entropy over the training split plus two
weighted regularizers: the squared relevance shortfall of retained distant
neighbors, and the retained-edge count.  The count term is an indicator
quantity with no useful gradient; it is reported in every loss breakdown
and steers the discrete retention schedule, while continuous parameters are
driven by the cross-entropy and relevance terms only.

Gradients are hand-derived reverse mode over the whole pipeline (softmax
hop weights, both propagation branches, the classifier, and the score
projections through the per-row softmax) and are verified against central
finite differences; the check is part of the permanent test suite and the
``gradcheck`` CLI command.

The loop is full batch: one parameter update per epoch.  Each epoch the
neighbor masks are rebuilt from the current projections (full mode),
validation metrics are computed from a clean forward pass, the best
validation checkpoint is tracked, and the retention schedule reacts to
validation plateaus.  Cross-entropy averages (rather than sums) over the
training split so the regularizer weights transfer across datasets.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp

from .data import micro_macro_f1
from .errors import DivergenceError, InputError
from .hops import HopSet, build_hopset, effective_hops, softmax_weights
from .masking import (
    MaskState,
    RetentionSchedule,
    _filter_from_mask,
    _top_m_select,
    build_mask_state,
    neighbor_scores,
    relevance_penalty,
    retained_edge_count,
    scores_backward,
    update_retention,
)
from .model import ModelParams, init_params, low_order_operator, predict, relu
from .sparse import csr_from_edges, spmm_dense, sym_normalize

__all__ = [
    "TrainConfig",
    "LossBreakdown",
    "AdamState",
    "cross_entropy",
    "compose_loss",
    "backward",
    "optimizer_step",
    "train_loop",
    "TrainResult",
    "EpochRecord",
    "gradient_check",
    "random_fixture",
]

_LOG_CLAMP = 1e-12

# parameter blocks that receive L2 weight decay (biases and logits do not)
_DECAYED = {"w_high", "w_low", "w1", "w2", "w_cls"}


@dataclass
class TrainConfig:
    epochs: int = 300
    learning_rate: float = 0.01
    lambda1: float = 0.005
    lambda2: float = 0.01
    beta: float = 0.5
    K: int = 3
    d: int = 64
    d_f: int = 64
    seed: int = 0
    mode: str = "full"
    normalize: str = "per_hop"
    precision: str = "f64"
    dropout: float = 0.0
    weight_decay: float = 0.0
    retention_rule: str = "fixed"
    m_init: int = 16
    patience: int = 20
    delta_m: int = 1
    retention_floor: int = 1
    early_stop_patience: int = 50
    row_normalize: bool = False

    def validate(self) -> None:
        if self.epochs < 1:
            raise InputError("epochs must be >= 1")
        if self.K < 1:
            raise InputError("K must be >= 1")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise InputError("regularizer weights must be >= 0")
        if not 0.0 <= self.beta <= 1.0:
            raise InputError("beta must lie in [0, 1]")
        if not 0.0 <= self.dropout < 1.0:
            raise InputError("dropout must lie in [0, 1)")
        if self.mode not in ("base", "full"):
            raise InputError(f"unknown mode {self.mode!r}")
        if self.normalize not in ("per_hop", "fused", "none"):
            raise InputError(f"unknown normalization {self.normalize!r}")
        if self.precision not in ("f64", "f32"):
            raise InputError(f"unknown precision {self.precision!r}")

    def dtype(self):
        return np.float64 if self.precision == "f64" else np.float32


@dataclass
class LossBreakdown:
    classification: float
    relevance: float
    sparsity: float
    total: float
    lambda1: float
    lambda2: float


@dataclass
class EpochRecord:
    epoch: int
    loss: LossBreakdown
    val_micro: float
    val_macro: float
    retention_m: tuple


@dataclass
class TrainResult:
    params: ModelParams
    history: list[EpochRecord]
    best_epoch: int
    best_val_micro: float
    retention_m: np.ndarray | None
    seed: int


def cross_entropy(probs: np.ndarray, labels: np.ndarray, index_set) -> float:
    """Mean negative log-probability of the true class over ``index_set``."""
    idx = np.asarray(index_set, dtype=np.int64)
    if idx.size == 0:
        raise InputError("cross entropy over an empty index set")
    p = probs[idx, labels[idx]]
    return float(-np.log(np.maximum(p, _LOG_CLAMP)).mean())


def compose_loss(
    cla: float, mask: MaskState | None, lambda1: float, lambda2: float
) -> LossBreakdown:
    """Assemble the full breakdown; without masks both extra terms are zero."""
    rel = relevance_penalty(mask) if mask is not None else 0.0
    sp = float(retained_edge_count(mask)) if mask is not None else 0.0
    return LossBreakdown(
        classification=cla,
        relevance=rel,
        sparsity=sp,
        total=cla + lambda1 * rel + lambda2 * sp,
        lambda1=lambda1,
        lambda2=lambda2,
    )


# ------------------------------------------------------------ epoch artifacts


@dataclass
class Artifacts:
    """Propagation state that stays fixed within one epoch."""

    x: np.ndarray
    hop_feats: list[np.ndarray] | None  # per-hop propagated features
    low_feat: np.ndarray | None
    mask: MaskState | None
    hopset: HopSet
    # fused-normalization support (entry-level, all hops concatenated)
    fused_rows: np.ndarray | None = None
    fused_cols: np.ndarray | None = None
    fused_hop: np.ndarray | None = None
    hop_degrees: np.ndarray | None = None  # (n, K) row degrees per hop


def build_artifacts(
    x: np.ndarray,
    hopset: HopSet,
    mask: MaskState | None,
    cfg: TrainConfig,
    low_feat: np.ndarray | None = None,
) -> Artifacts:
    eff = effective_hops(hopset, mask)
    dtype = x.dtype
    arts = Artifacts(x=x, hop_feats=None, low_feat=low_feat, mask=mask, hopset=hopset)
    if cfg.normalize == "fused":
        rows, cols, hop_id, deg = [], [], [], []
        for j, m in enumerate(eff):
            rows.append(m.row_ids())
            cols.append(m.col_indices.astype(np.int64))
            hop_id.append(np.full(m.nnz, j, dtype=np.int32))
            deg.append(np.diff(m.row_offsets).astype(np.float64))
        arts.fused_rows = np.concatenate(rows)
        arts.fused_cols = np.concatenate(cols)
        arts.fused_hop = np.concatenate(hop_id)
        arts.hop_degrees = np.stack(deg, axis=1)
    else:
        ops = [sym_normalize(m) for m in eff] if cfg.normalize == "per_hop" else eff
        arts.hop_feats = [spmm_dense(op, x).astype(dtype, copy=False) for op in ops]
    if cfg.mode == "full" and arts.low_feat is None:
        arts.low_feat = spmm_dense(low_order_operator(hopset), x).astype(
            dtype, copy=False
        )
    return arts


def _entry_dots(p, q, rows, cols, chunk=1 << 18):
    out = np.empty(rows.shape[0], dtype=np.float64)
    for lo in range(0, rows.shape[0], chunk):
        hi = lo + chunk
        out[lo:hi] = np.einsum("ij,ij->i", p[rows[lo:hi]], q[cols[lo:hi]])
    return out


def _fused_operator_values(arts: Artifacts, alpha: np.ndarray):
    """Entry values of the normalized fused operator for the given weights."""
    dvec = arts.hop_degrees @ alpha  # weighted degree per node
    with np.errstate(divide="ignore"):
        inv = np.where(dvec > 0, 1.0 / np.sqrt(dvec), 0.0)
    coeff = inv[arts.fused_rows] * inv[arts.fused_cols]
    return alpha[arts.fused_hop] * coeff, dvec, inv, coeff


def _fused_propagate(arts: Artifacts, alpha: np.ndarray):
    vals, dvec, inv, coeff = _fused_operator_values(arts, alpha)
    n = arts.x.shape[0]
    op = sp.csr_matrix((vals, (arts.fused_rows, arts.fused_cols)), shape=(n, n))
    return np.asarray(op @ arts.x), (vals, dvec, inv, coeff)


@dataclass
class _StepTape:
    """Intermediates recorded by the forward pass for the backward pass."""

    alpha: np.ndarray
    s_high: np.ndarray
    z_high: np.ndarray
    h_high: np.ndarray
    low_in: np.ndarray | None
    z_low: np.ndarray | None
    h_low: np.ndarray | None
    h: np.ndarray
    probs: np.ndarray
    high_drop: np.ndarray | None
    low_drop: np.ndarray | None
    fused_state: tuple | None


def _forward_step(arts: Artifacts, params: ModelParams, cfg: TrainConfig, rng=None):
    """Training forward pass; optional input dropout on the propagated features."""
    alpha = softmax_weights(params.hop_logits).alpha
    fused_state = None
    if cfg.normalize == "fused":
        s_raw, fused_state = _fused_propagate(arts, alpha)
    else:
        s_raw = np.zeros_like(arts.hop_feats[0])
        for a_i, u in zip(alpha, arts.hop_feats):
            s_raw += a_i * u
    high_drop = low_drop = None
    s_high = s_raw
    if rng is not None and cfg.dropout > 0:
        keep = 1.0 - cfg.dropout
        high_drop = (rng.random(s_raw.shape) < keep) / keep
        s_high = s_raw * high_drop
    z_high = s_high @ params.w_high
    h_high = relu(z_high)
    low_in = z_low = h_low = None
    if params.mode == "full":
        low_in = arts.low_feat
        if rng is not None and cfg.dropout > 0:
            keep = 1.0 - cfg.dropout
            low_drop = (rng.random(low_in.shape) < keep) / keep
            low_in = low_in * low_drop
        z_low = low_in @ params.w_low
        h_low = relu(z_low)
        h = params.beta * h_low + (1.0 - params.beta) * h_high
    else:
        h = h_high
    probs = predict(h, params)
    return _StepTape(
        alpha=alpha,
        s_high=s_high,
        z_high=z_high,
        h_high=h_high,
        low_in=low_in,
        z_low=z_low,
        h_low=h_low,
        h=h,
        probs=probs,
        high_drop=high_drop,
        low_drop=low_drop,
        fused_state=fused_state,
    )


def _loss_from_tape(
    tape: _StepTape,
    labels: np.ndarray,
    train_idx: np.ndarray,
    arts: Artifacts,
    params: ModelParams,
    cfg: TrainConfig,
    scores_override: dict[int, np.ndarray] | None = None,
) -> LossBreakdown:
    cla = cross_entropy(tape.probs, labels, train_idx)
    if params.mode != "full" or arts.mask is None:
        return compose_loss(cla, None, cfg.lambda1, cfg.lambda2)
    if scores_override is None:
        return compose_loss(cla, arts.mask, cfg.lambda1, cfg.lambda2)
    rel = 0.0
    for i, vals in scores_override.items():
        kept = arts.mask.retained[i]
        rel += float(np.sum((1.0 - vals[kept]) ** 2))
    sp = float(retained_edge_count(arts.mask))
    return LossBreakdown(
        classification=cla,
        relevance=rel,
        sparsity=sp,
        total=cla + cfg.lambda1 * rel + cfg.lambda2 * sp,
        lambda1=cfg.lambda1,
        lambda2=cfg.lambda2,
    )


def structured_loss(
    arts: Artifacts,
    params: ModelParams,
    labels: np.ndarray,
    train_idx: np.ndarray,
    cfg: TrainConfig,
) -> LossBreakdown:
    """Loss as a function of the parameters with the mask structure held fixed.

    Score values are recomputed from the current projections over the fixed
    hop supports; retained sets stay frozen.  This is exactly the function
    the analytic backward differentiates, which makes it the right target
    for finite-difference verification.
    """
    tape = _forward_step(arts, params, cfg, rng=None)
    override = None
    if params.mode == "full" and arts.mask is not None:
        override = {
            i: neighbor_scores(
                arts.x, params.w1, params.w2, arts.hopset.pure[i - 1]
            ).values
            for i in arts.mask.scores
        }
    return _loss_from_tape(tape, labels, train_idx, arts, params, cfg, override)


def _step_gradients(
    tape: _StepTape,
    arts: Artifacts,
    params: ModelParams,
    labels: np.ndarray,
    train_idx: np.ndarray,
    cfg: TrainConfig,
) -> dict[str, np.ndarray]:
    n, C = tape.probs.shape
    g_logits = np.zeros_like(tape.probs)
    onehot = np.zeros((train_idx.shape[0], C), dtype=tape.probs.dtype)
    onehot[np.arange(train_idx.shape[0]), labels[train_idx]] = 1.0
    g_logits[train_idx] = (tape.probs[train_idx] - onehot) / train_idx.shape[0]

    grads: dict[str, np.ndarray] = {}
    grads["w_cls"] = tape.h.T @ g_logits
    grads["b_cls"] = g_logits.sum(axis=0)
    d_h = g_logits @ params.w_cls.T

    if params.mode == "full":
        d_high = (1.0 - params.beta) * d_h
        d_low = params.beta * d_h
        delta_low = d_low * (tape.z_low > 0)
        grads["w_low"] = tape.low_in.T @ delta_low
    else:
        d_high = d_h

    delta_high = d_high * (tape.z_high > 0)
    grads["w_high"] = tape.s_high.T @ delta_high
    d_s = delta_high @ params.w_high.T
    if tape.high_drop is not None:
        d_s = d_s * tape.high_drop

    # hop-weight gradient
    if cfg.normalize == "fused":
        d_alpha = _fused_alpha_grad(arts, tape, d_s)
    else:
        d_alpha = np.array(
            [float(np.dot(u.reshape(-1), d_s.reshape(-1))) for u in arts.hop_feats]
        )
    a = tape.alpha
    grads["hop_logits"] = a * (d_alpha - float(np.dot(a, d_alpha)))

    if params.mode == "full" and arts.mask is not None and cfg.lambda1 > 0:
        dw1 = np.zeros_like(params.w1)
        dw2 = np.zeros_like(params.w2)
        for i, scores in arts.mask.scores.items():
            kept = arts.mask.retained[i]
            dscore = np.zeros(scores.nnz, dtype=np.float64)
            dscore[kept] = -2.0 * cfg.lambda1 * (1.0 - scores.values[kept])
            g1, g2 = scores_backward(
                arts.x, params.w1, params.w2, arts.hopset.pure[i - 1], scores, dscore
            )
            dw1 += g1
            dw2 += g2
        grads["w1"] = dw1
        grads["w2"] = dw2
    elif params.mode == "full":
        grads["w1"] = np.zeros_like(params.w1)
        grads["w2"] = np.zeros_like(params.w2)
    return grads


def _fused_alpha_grad(arts: Artifacts, tape: _StepTape, d_s: np.ndarray) -> np.ndarray:
    """Exact hop-weight gradient through the jointly normalized operator."""
    vals, dvec, inv, coeff = tape.fused_state
    rows, cols, hop = arts.fused_rows, arts.fused_cols, arts.fused_hop
    K = arts.hop_degrees.shape[1]
    g_entries = _entry_dots(d_s, arts.x, rows, cols)
    t1 = np.bincount(hop, weights=g_entries * coeff, minlength=K)
    e = g_entries * vals
    r = np.bincount(rows, weights=e, minlength=dvec.shape[0])
    c = np.bincount(cols, weights=e, minlength=dvec.shape[0])
    with np.errstate(divide="ignore", invalid="ignore"):
        per_node = np.where(dvec > 0, (r + c) / dvec, 0.0)
    return t1 - 0.5 * (arts.hop_degrees.T @ per_node)


def backward(
    arts: Artifacts,
    params: ModelParams,
    labels: np.ndarray,
    train_idx: np.ndarray,
    cfg: TrainConfig,
    rng=None,
):
    """One loss evaluation with exact gradients for every trainable tensor."""
    train_idx = np.asarray(train_idx, dtype=np.int64)
    tape = _forward_step(arts, params, cfg, rng=rng)
    loss = _loss_from_tape(tape, labels, train_idx, arts, params, cfg)
    grads = _step_gradients(tape, arts, params, labels, train_idx, cfg)
    return loss, grads, tape


# ------------------------------------------------------------------ optimizer


@dataclass
class AdamState:
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def optimizer_step(
    params: ModelParams, grads: dict[str, np.ndarray], state: AdamState, lr: float
) -> None:
    """In-place bias-corrected moment update over the trainable tensors."""
    state.step += 1
    t = state.step
    with np.errstate(over="ignore", invalid="ignore"):
        for name, tensor in params.trainables():
            g = grads[name]
            if g.shape != tensor.shape:
                raise InputError(f"gradient shape mismatch for {name}")
            m = state.m.setdefault(name, np.zeros_like(tensor))
            v = state.v.setdefault(name, np.zeros_like(tensor))
            m *= state.beta1
            m += (1 - state.beta1) * g
            v *= state.beta2
            v += (1 - state.beta2) * g * g
            m_hat = m / (1 - state.beta1**t)
            v_hat = v / (1 - state.beta2**t)
            tensor -= lr * m_hat / (np.sqrt(v_hat) + state.eps)


# ------------------------------------------------------------------ main loop


def _prepare_features(dataset, cfg: TrainConfig) -> np.ndarray:
    x = np.asarray(dataset.features, dtype=cfg.dtype())
    if cfg.row_normalize:
        norms = x.sum(axis=1, keepdims=True)
        with np.errstate(divide="ignore", invalid="ignore"):
            x = np.where(norms != 0, x / norms, x)
    return np.ascontiguousarray(x)


def _rebuild_filters(mask: MaskState, hopset: HopSet, schedule: RetentionSchedule):
    """Refresh kept sets from stored scores after a retention change."""
    for i in list(mask.scores):
        hop = hopset.pure[i - 1]
        kept = _top_m_select(hop, mask.scores[i].values, int(schedule.m[i - 1]))
        mask.retained[i] = kept
        mask.filters[i] = _filter_from_mask(hop, kept)
        mask.retained_counts[i] = np.diff(mask.filters[i].row_offsets)


def train_loop(dataset, hopset: HopSet, cfg: TrainConfig) -> TrainResult:
    """Full-batch training with per-epoch mask rebuilds and best-val tracking."""
    cfg.validate()
    if hopset.K != cfg.K:
        raise InputError(f"hop cache has K={hopset.K}, config wants K={cfg.K}")
    x = _prepare_features(dataset, cfg)
    labels = np.asarray(dataset.labels, dtype=np.int64)
    train_idx = np.asarray(dataset.splits["train"], dtype=np.int64)
    val_idx = np.asarray(dataset.splits["val"], dtype=np.int64)

    params = init_params(
        f=x.shape[1],
        d=cfg.d,
        d_f=min(cfg.d_f, x.shape[1]),
        K=cfg.K,
        C=dataset.num_classes,
        seed=cfg.seed,
        beta=cfg.beta,
        mode=cfg.mode,
    )
    schedule = RetentionSchedule.uniform(
        cfg.K,
        cfg.m_init,
        rule=cfg.retention_rule,
        patience=cfg.patience,
        step=cfg.delta_m,
        floor=cfg.retention_floor,
    )
    drop_rng = np.random.default_rng(cfg.seed)

    low_feat = None
    if cfg.mode == "full":
        low_feat = spmm_dense(low_order_operator(hopset), x).astype(
            x.dtype, copy=False
        )

    def make_artifacts(p: ModelParams):
        mask = None
        if cfg.mode == "full" and cfg.K >= 2:
            mask = build_mask_state(x, p.w1, p.w2, hopset, schedule)
        return build_artifacts(x, hopset, mask, cfg, low_feat=low_feat)

    arts = make_artifacts(params)
    base_mode_static = cfg.mode == "base"

    history: list[EpochRecord] = []
    val_series: list[float] = []
    adam = AdamState()
    best = (-1.0, -1, None, None)  # (val_micro, epoch, params copy, retention copy)
    stale = 0

    for epoch in range(cfg.epochs):
        loss, grads, _ = backward(
            arts, params, labels, train_idx, cfg, rng=drop_rng if cfg.dropout else None
        )
        if not math.isfinite(loss.total):
            raise DivergenceError(
                f"non-finite loss at epoch {epoch}: cla={loss.classification!r} "
                f"rel={loss.relevance!r}"
            )
        if cfg.weight_decay > 0:
            for name, tensor in params.trainables():
                if name in _DECAYED:
                    grads[name] = grads[name] + cfg.weight_decay * tensor
        optimizer_step(params, grads, adam, cfg.learning_rate)

        # clean evaluation state for the updated parameters
        if base_mode_static:
            eval_arts = arts
        else:
            eval_arts = make_artifacts(params)
        tape = _forward_step(eval_arts, params, cfg, rng=None)
        pred = np.argmax(tape.probs, axis=1)
        val_micro, val_macro = micro_macro_f1(
            pred, labels, val_idx, num_classes=dataset.num_classes
        )
        val_series.append(val_micro)

        history.append(
            EpochRecord(
                epoch=epoch,
                loss=loss,
                val_micro=val_micro,
                val_macro=val_macro,
                retention_m=tuple(int(v) for v in schedule.m),
            )
        )

        if val_micro > best[0]:
            best = (val_micro, epoch, params.copy(), schedule.m.copy())
            stale = 0
        else:
            stale += 1

        new_schedule = update_retention(schedule, val_series)
        m_changed = not np.array_equal(new_schedule.m, schedule.m)
        schedule = new_schedule
        if m_changed and eval_arts.mask is not None:
            # keep the propagated features consistent with the shrunk filters
            _rebuild_filters(eval_arts.mask, hopset, schedule)
            eval_arts = build_artifacts(
                x, hopset, eval_arts.mask, cfg, low_feat=low_feat
            )

        arts = eval_arts
        if cfg.early_stop_patience and stale >= cfg.early_stop_patience:
            break

    best_val, best_epoch, best_params, best_m = best
    if best_params is None:
        best_params, best_m = params.copy(), schedule.m.copy()
        best_epoch, best_val = len(history) - 1, val_series[-1] if val_series else 0.0
    return TrainResult(
        params=best_params,
        history=history,
        best_epoch=best_epoch,
        best_val_micro=best_val,
        retention_m=best_m if cfg.mode == "full" else None,
        seed=cfg.seed,
    )


def evaluate(dataset, hopset: HopSet, params: ModelParams, cfg: TrainConfig,
             retention_m=None, split: str = "test"):
    """Metrics of a parameter set on one split, masks rebuilt from the params."""
    x = _prepare_features(dataset, cfg)
    labels = np.asarray(dataset.labels, dtype=np.int64)
    idx = np.asarray(dataset.splits[split], dtype=np.int64)
    mask = None
    if params.mode == "full" and cfg.K >= 2:
        m = (
            np.asarray(retention_m, dtype=np.int64)
            if retention_m is not None
            else RetentionSchedule.uniform(cfg.K, cfg.m_init).m
        )
        schedule = RetentionSchedule(m=m)
        mask = build_mask_state(x, params.w1, params.w2, hopset, schedule)
    arts = build_artifacts(x, hopset, mask, cfg)
    tape = _forward_step(arts, params, cfg, rng=None)
    pred = np.argmax(tape.probs, axis=1)
    return micro_macro_f1(pred, labels, idx, num_classes=dataset.num_classes)


# ------------------------------------------------------------- gradient check


def random_fixture(seed: int, mode: str = "full", normalize: str = "per_hop"):
    """Small random graph/feature/label fixture for gradient verification."""
    rng = np.random.default_rng(seed)
    n, f, d, d_f, K, C = 8, 7, 5, 3, 3, 3
    while True:
        mask = rng.random((n, n)) < 0.35
        mask = np.triu(mask, 1)
        src, dst = np.nonzero(mask | mask.T)
        if src.size >= 2 * (n - 1):
            break
    adj = csr_from_edges(list(zip(src.tolist(), dst.tolist())), n)
    hopset = build_hopset(adj, K=K, norm_mode=normalize)
    x = rng.standard_normal((n, f))
    labels = rng.integers(0, C, size=n)
    train_idx = np.arange(n)[rng.random(n) < 0.75]
    if train_idx.size == 0:
        train_idx = np.array([0])
    cfg = TrainConfig(
        epochs=1,
        K=K,
        d=d,
        d_f=d_f,
        seed=seed,
        mode=mode,
        normalize=normalize,
        lambda1=0.005,
        lambda2=0.01,
        m_init=2,
        dropout=0.0,
    )
    params = init_params(f, d, d_f, K, C, seed=seed + 1, mode=mode)
    mask_state = None
    if mode == "full":
        mask_state = build_mask_state(
            x, params.w1, params.w2, hopset, RetentionSchedule.uniform(K, cfg.m_init)
        )
    arts = build_artifacts(x, hopset, mask_state, cfg)
    return arts, params, labels, train_idx, cfg


def gradient_check(seed: int, mode: str = "full", normalize: str = "per_hop",
                   eps: float = 1e-5) -> dict[str, float]:
    """Max relative error per parameter block vs central finite differences."""
    arts, params, labels, train_idx, cfg = random_fixture(seed, mode, normalize)
    _, grads, _ = backward(arts, params, labels, train_idx, cfg)
    errors: dict[str, float] = {}
    for name, tensor in params.trainables():
        fd = np.zeros_like(tensor)
        flat = tensor.reshape(-1)
        fd_flat = fd.reshape(-1)
        for k in range(flat.shape[0]):
            orig = flat[k]
            flat[k] = orig + eps
            up = structured_loss(arts, params, labels, train_idx, cfg).total
            flat[k] = orig - eps
            down = structured_loss(arts, params, labels, train_idx, cfg).total
            flat[k] = orig
            fd_flat[k] = (up - down) / (2 * eps)
        scale = max(1.0, float(np.abs(grads[name]).max()), float(np.abs(fd).max()))
        errors[name] = float(np.abs(grads[name] - fd).max()) / scale
    return errors
