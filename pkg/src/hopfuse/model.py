"""Forward model: multi-hop branch, 2-hop local branch, fusion, prediction.

Two operating modes share one parameter container:

* ``base`` — node representations come from the weighted multi-hop
  propagation alone (no masking, no local branch, no score projections);
* ``full`` — a 2-hop local branch is blended in with a fixed factor
  ``beta`` and distant hops pass through the relevance masks.

The activation is ReLU throughout.  The mix factor ``beta`` is treated as a
swept hyperparameter, not a trained weight.  Forward computation is pure:
identical inputs give bit-identical outputs, so sweeps can evaluate
concurrently.

Checkpoint layout (little-endian): u8 version, u64 f, d, d_f, K, C, mode
code, seed, f64 beta, u64 retention-vector length + i64 retention sizes,
then the trainable tensors as raw f64 in declared order (hop logits,
high projection, low projection, two score projections, classifier weight,
classifier bias; base mode omits the low/score projections).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError, InputError, MissingFileError
from .hops import HopSet, fuse_hops, softmax_weights
from .masking import MaskState
from .sparse import SparseMatrix, identity, spmm_dense, support_union, sym_normalize

__all__ = [
    "ModelParams",
    "init_params",
    "low_order_operator",
    "forward_high",
    "forward_low",
    "fuse_representations",
    "predict",
    "forward",
    "save_checkpoint",
    "load_checkpoint",
]

MODES = ("base", "full")

_CKPT_VERSION = 1


@dataclass
class ModelParams:
    """All trainable state plus the fixed mix factor and mode."""

    hop_logits: np.ndarray
    w_high: np.ndarray
    w_low: np.ndarray | None
    w1: np.ndarray | None
    w2: np.ndarray | None
    w_cls: np.ndarray
    b_cls: np.ndarray
    beta: float
    mode: str

    def trainables(self) -> list[tuple[str, np.ndarray]]:
        """Named trainable tensors in the canonical (checkpoint) order."""
        out = [("hop_logits", self.hop_logits), ("w_high", self.w_high)]
        if self.mode == "full":
            out += [("w_low", self.w_low), ("w1", self.w1), ("w2", self.w2)]
        out += [("w_cls", self.w_cls), ("b_cls", self.b_cls)]
        return out

    def copy(self) -> "ModelParams":
        return ModelParams(
            hop_logits=self.hop_logits.copy(),
            w_high=self.w_high.copy(),
            w_low=None if self.w_low is None else self.w_low.copy(),
            w1=None if self.w1 is None else self.w1.copy(),
            w2=None if self.w2 is None else self.w2.copy(),
            w_cls=self.w_cls.copy(),
            b_cls=self.b_cls.copy(),
            beta=self.beta,
            mode=self.mode,
        )

    @property
    def dims(self) -> tuple[int, int, int, int, int]:
        f, d = self.w_high.shape
        d_f = self.w1.shape[0] if self.w1 is not None else 0
        K = self.hop_logits.shape[0]
        C = self.w_cls.shape[1]
        return f, d, d_f, K, C


def _glorot(rng, rows, cols):
    bound = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-bound, bound, size=(rows, cols))


def init_params(
    f: int,
    d: int,
    d_f: int,
    K: int,
    C: int,
    seed: int,
    beta: float = 0.5,
    mode: str = "full",
) -> ModelParams:
    """Deterministic initialization: fan-balanced uniform weights, zero logits.

    Draw order is fixed (high, low, score projections, classifier) so a seed
    pins every tensor bit-for-bit.
    """
    if min(f, d, K, C) < 1 or (mode == "full" and d_f < 1):
        raise InputError("all dimensions must be >= 1")
    if mode not in MODES:
        raise InputError(f"unknown mode {mode!r}")
    if not 0.0 <= beta <= 1.0:
        raise InputError("beta must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    w_high = _glorot(rng, f, d)
    if mode == "full":
        w_low = _glorot(rng, f, d)
        w1 = _glorot(rng, d_f, f)
        w2 = _glorot(rng, d_f, f)
    else:
        w_low = w1 = w2 = None
    w_cls = _glorot(rng, d, C)
    return ModelParams(
        hop_logits=np.zeros(K, dtype=np.float64),
        w_high=w_high,
        w_low=w_low,
        w1=w1,
        w2=w2,
        w_cls=w_cls,
        b_cls=np.zeros(C, dtype=np.float64),
        beta=float(beta),
        mode=mode,
    )


def relu(z: np.ndarray) -> np.ndarray:
    return np.maximum(z, 0.0)


def low_order_operator(hopset: HopSet) -> SparseMatrix:
    """Normalized 2-hop reachability with guaranteed self-entries.

    The union with the identity keeps isolated nodes' own features alive in
    the local branch.
    """
    return sym_normalize(support_union(hopset.two_hop, identity(hopset.n)))


def forward_high(
    hopset: HopSet, mask: MaskState | None, params: ModelParams, x: np.ndarray
) -> np.ndarray:
    """Multi-hop branch: relu(fused_operator . x . w_high)."""
    fused = fuse_hops(hopset, softmax_weights(params.hop_logits), mask)
    return relu(spmm_dense(fused, x) @ params.w_high)


def forward_low(hopset: HopSet, params: ModelParams, x: np.ndarray) -> np.ndarray:
    """Local branch: relu(normalized 2-hop operator . x . w_low)."""
    if params.w_low is None:
        raise InputError("low-order branch unavailable in base mode")
    return relu(spmm_dense(low_order_operator(hopset), x) @ params.w_low)


def fuse_representations(
    h_low: np.ndarray, h_high: np.ndarray, beta: float
) -> np.ndarray:
    if h_low.shape != h_high.shape:
        raise InputError(f"shape mismatch: {h_low.shape} vs {h_high.shape}")
    return beta * h_low + (1.0 - beta) * h_high


def predict(h: np.ndarray, params: ModelParams) -> np.ndarray:
    """Row-wise class probabilities from representations."""
    if h.ndim != 2 or h.shape[1] != params.w_cls.shape[0]:
        raise InputError("representation width does not match the classifier")
    logits = h @ params.w_cls + params.b_cls
    logits -= logits.max(axis=1, keepdims=True)
    e = np.exp(logits)
    return e / e.sum(axis=1, keepdims=True)


def forward(
    x: np.ndarray,
    hopset: HopSet,
    mask: MaskState | None,
    params: ModelParams,
) -> tuple[np.ndarray, np.ndarray]:
    """Node representations and class probabilities for the configured mode."""
    if params.mode == "base":
        h = forward_high(hopset, None, params, x)
    else:
        h_high = forward_high(hopset, mask, params, x)
        h_low = forward_low(hopset, params, x)
        h = fuse_representations(h_low, h_high, params.beta)
    return h, predict(h, params)


# ----------------------------------------------------------------- checkpoint


def save_checkpoint(path, params: ModelParams, seed: int, retention_m=None) -> None:
    f, d, d_f, K, C = params.dims
    mode_code = MODES.index(params.mode)
    retention = (
        np.asarray(retention_m, dtype=np.int64)
        if retention_m is not None
        else np.empty(0, dtype=np.int64)
    )
    with open(path, "wb") as fh:
        np.array([_CKPT_VERSION], dtype="<u1").tofile(fh)
        np.array([f, d, d_f, K, C, mode_code, seed], dtype="<u8").tofile(fh)
        np.array([params.beta], dtype="<f8").tofile(fh)
        np.array([retention.shape[0]], dtype="<u8").tofile(fh)
        retention.astype("<i8").tofile(fh)
        for _, tensor in params.trainables():
            np.ascontiguousarray(tensor, dtype="<f8").tofile(fh)


def _read(fh, dtype, count):
    out = np.fromfile(fh, dtype=dtype, count=count)
    if out.shape[0] != count:
        raise DataError("checkpoint truncated")
    return out


def load_checkpoint(path):
    """Returns (params, seed, retention sizes or None)."""
    try:
        fh = open(path, "rb")
    except FileNotFoundError:
        raise MissingFileError("checkpoint not found", path=str(path)) from None
    with fh:
        version = int(_read(fh, "<u1", 1)[0])
        if version != _CKPT_VERSION:
            raise DataError(f"unsupported checkpoint version {version}", path=str(path))
        f, d, d_f, K, C, mode_code, seed = (int(v) for v in _read(fh, "<u8", 7))
        if mode_code >= len(MODES):
            raise DataError("corrupt mode code", path=str(path))
        mode = MODES[mode_code]
        beta = float(_read(fh, "<f8", 1)[0])
        m_len = int(_read(fh, "<u8", 1)[0])
        retention = _read(fh, "<i8", m_len).astype(np.int64) if m_len else None
        hop_logits = _read(fh, "<f8", K)
        w_high = _read(fh, "<f8", f * d).reshape(f, d)
        if mode == "full":
            w_low = _read(fh, "<f8", f * d).reshape(f, d)
            w1 = _read(fh, "<f8", d_f * f).reshape(d_f, f)
            w2 = _read(fh, "<f8", d_f * f).reshape(d_f, f)
        else:
            w_low = w1 = w2 = None
        w_cls = _read(fh, "<f8", d * C).reshape(d, C)
        b_cls = _read(fh, "<f8", C)
    params = ModelParams(
        hop_logits=hop_logits,
        w_high=w_high,
        w_low=w_low,
        w1=w1,
        w2=w2,
        w_cls=w_cls,
        b_cls=b_cls,
        beta=beta,
        mode=mode,
    )
    return params, seed, retention
