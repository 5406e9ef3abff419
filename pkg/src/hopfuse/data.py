"""Dataset ingestion, canonical on-disk layout, converters and metrics.

A canonical dataset directory holds five files:

* ``edges.tsv``    — ``src \\t dst`` integer pairs, ``#`` comments allowed;
* ``features.tsv`` — node id followed by ``f`` feature values;
* ``labels.tsv``   — ``node \\t class`` (nodes absent here are unlabeled);
* ``splits.json``  — ``{"train": [...], "val": [...], "test": [...]}``;
* ``meta.json``    — ``{"n":, "f":, "C":, "name":}``.

Plain text plus JSON keeps the format portable and hand-inspectable; the
binary hop caches live elsewhere.  Loading symmetrizes the adjacency,
drops self-loops (hop distillation requires a simple graph) and
cross-checks every shape against the metadata.  Converters are provided
for the pickled citation-benchmark layout and the OGB node-property
layout; both are lossless and produce a deterministic node order.
"""

from __future__ import annotations

import gzip
import json
import pickle
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import (
    DataError,
    InputError,
    MissingFileError,
    ShapeMismatchError,
    SplitOverlapError,
)
from .hops import edge_list_hash
from .sparse import SparseMatrix, csr_from_edges

__all__ = [
    "Dataset",
    "load_canonical",
    "save_canonical",
    "convert_planetoid",
    "convert_ogb",
    "micro_macro_f1",
]

_SPLIT_NAMES = ("train", "val", "test")


@dataclass
class Dataset:
    n: int
    adjacency: SparseMatrix
    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    splits: dict[str, np.ndarray]
    name: str = ""
    edge_hash: bytes = b""

    def validate(self) -> None:
        if self.features.shape[0] != self.n or self.labels.shape[0] != self.n:
            raise ShapeMismatchError("feature/label row count does not match n")
        if not np.all(np.isfinite(self.features)):
            raise DataError("non-finite feature values")
        seen: set[int] = set()
        for split in _SPLIT_NAMES:
            idx = self.splits[split]
            if idx.size and (idx.min() < 0 or idx.max() >= self.n):
                raise DataError(f"{split} split index out of range")
            overlap = seen.intersection(idx.tolist())
            if overlap:
                raise SplitOverlapError(
                    f"splits overlap on nodes {sorted(overlap)[:5]}"
                )
            seen.update(idx.tolist())
            if np.any(self.labels[idx] < 0):
                raise DataError(f"{split} split contains unlabeled nodes")
        if np.any(self.labels >= self.num_classes):
            raise DataError("label id exceeds class count")


# -------------------------------------------------------------------- loading


def _require(path: Path) -> Path:
    if not path.exists():
        raise MissingFileError("required dataset file missing", path=str(path))
    return path


def _read_edges(path: Path, n: int) -> list[tuple[int, int]]:
    edges = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            body = line.split("#", 1)[0].strip()
            if not body:
                continue
            parts = body.split()
            if len(parts) != 2:
                raise DataError("expected two columns", path=str(path), line=lineno)
            try:
                u, v = int(parts[0]), int(parts[1])
            except ValueError:
                raise DataError(
                    "non-integer node id", path=str(path), line=lineno
                ) from None
            if not (0 <= u < n and 0 <= v < n):
                raise DataError(
                    f"node id out of range ({u}, {v})", path=str(path), line=lineno
                )
            if u != v:
                edges.append((u, v))
    return edges


def load_canonical(directory) -> Dataset:
    """Load and validate a canonical dataset directory."""
    d = Path(directory)
    meta_path = _require(d / "meta.json")
    with open(meta_path) as fh:
        meta = json.load(fh)
    for key in ("n", "f", "C"):
        if key not in meta:
            raise DataError(f"meta.json missing {key!r}", path=str(meta_path))
    n, f, C = int(meta["n"]), int(meta["f"]), int(meta["C"])

    edges = _read_edges(_require(d / "edges.tsv"), n)
    adjacency = csr_from_edges(edges, n, symmetric=True)

    feat_path = _require(d / "features.tsv")
    table = pd.read_csv(feat_path, sep="\t", header=None, comment="#")
    if table.shape != (n, f + 1):
        raise ShapeMismatchError(
            f"features.tsv is {table.shape}, expected ({n}, {f + 1})",
            path=str(feat_path),
        )
    node_ids = table.iloc[:, 0].to_numpy(dtype=np.int64)
    if sorted(node_ids.tolist()) != list(range(n)):
        raise DataError("features.tsv must list every node exactly once",
                        path=str(feat_path))
    features = np.zeros((n, f), dtype=np.float64)
    features[node_ids] = table.iloc[:, 1:].to_numpy(dtype=np.float64)

    labels = np.full(n, -1, dtype=np.int64)
    lab_path = _require(d / "labels.tsv")
    lab = pd.read_csv(lab_path, sep="\t", header=None, comment="#")
    if lab.shape[1] != 2:
        raise DataError("labels.tsv must have two columns", path=str(lab_path))
    lnode = lab.iloc[:, 0].to_numpy(dtype=np.int64)
    lcls = lab.iloc[:, 1].to_numpy(dtype=np.int64)
    if lnode.size and (lnode.min() < 0 or lnode.max() >= n):
        raise DataError("label node id out of range", path=str(lab_path))
    if lcls.size and (lcls.min() < 0 or lcls.max() >= C):
        raise DataError("label class out of range", path=str(lab_path))
    labels[lnode] = lcls

    split_path = _require(d / "splits.json")
    with open(split_path) as fh:
        raw_splits = json.load(fh)
    splits = {}
    for key in _SPLIT_NAMES:
        if key not in raw_splits:
            raise DataError(f"splits.json missing {key!r}", path=str(split_path))
        splits[key] = np.asarray(sorted(raw_splits[key]), dtype=np.int64)

    ds = Dataset(
        n=n,
        adjacency=adjacency,
        features=features,
        labels=labels,
        num_classes=C,
        splits=splits,
        name=str(meta.get("name", d.name)),
        edge_hash=edge_list_hash(adjacency),
    )
    ds.validate()
    return ds


def save_canonical(directory, *, n, f, C, name, edges, features, labels, splits):
    """Write a canonical dataset directory (deterministic content)."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    undirected = sorted({(min(u, v), max(u, v)) for u, v in edges if u != v})
    with open(d / "edges.tsv", "w") as fh:
        for u, v in undirected:
            fh.write(f"{u}\t{v}\n")
    feat = pd.DataFrame(np.asarray(features, dtype=np.float64))
    feat.insert(0, "node", np.arange(n, dtype=np.int64))
    feat.to_csv(d / "features.tsv", sep="\t", header=False, index=False)
    labels = np.asarray(labels, dtype=np.int64)
    with open(d / "labels.tsv", "w") as fh:
        for node in range(n):
            if labels[node] >= 0:
                fh.write(f"{node}\t{labels[node]}\n")
    with open(d / "splits.json", "w") as fh:
        json.dump({k: [int(i) for i in splits[k]] for k in _SPLIT_NAMES}, fh)
    with open(d / "meta.json", "w") as fh:
        json.dump({"n": int(n), "f": int(f), "C": int(C), "name": name}, fh)
    return d


# ----------------------------------------------------------------- converters


def _load_pickle(path: Path):
    import warnings

    with open(path, "rb") as fh:
        with warnings.catch_warnings():
            # legacy pickles reference since-moved scipy module paths
            warnings.simplefilter("ignore", DeprecationWarning)
            return pickle.load(fh, encoding="latin1")


def convert_planetoid(raw_dir, out_dir, name: str) -> Path:
    """Convert the pickled citation-benchmark layout to a canonical directory.

    Expects ``ind.<name>.{x,y,tx,ty,allx,ally,graph,test.index}`` under
    ``raw_dir``.  Test rows are re-ordered into position by the test index
    file; index gaps (isolated test nodes in the citeseer release) become
    zero feature rows with no label.  Splits follow the standard protocol:
    the first ``len(y)`` nodes train, the next 500 validate, the test index
    nodes test.
    """
    raw = Path(raw_dir)
    parts = {}
    for suffix in ("x", "y", "tx", "ty", "allx", "ally", "graph"):
        parts[suffix] = _load_pickle(_require(raw / f"ind.{name}.{suffix}"))
    test_idx = np.loadtxt(
        _require(raw / f"ind.{name}.test.index"), dtype=np.int64
    ).reshape(-1)

    allx = parts["allx"].toarray() if hasattr(parts["allx"], "toarray") else parts["allx"]
    tx = parts["tx"].toarray() if hasattr(parts["tx"], "toarray") else parts["tx"]
    ally, ty, y = parts["ally"], parts["ty"], parts["y"]

    lo, hi = int(test_idx.min()), int(test_idx.max())
    full_range = np.arange(lo, hi + 1)
    n = allx.shape[0] + full_range.shape[0]
    f = allx.shape[1]
    C = ally.shape[1]

    features = np.zeros((n, f), dtype=np.float64)
    features[: allx.shape[0]] = allx
    features[test_idx] = tx  # re-order test rows into position; gaps stay zero

    onehot = np.zeros((n, C), dtype=np.float64)
    onehot[: ally.shape[0]] = ally
    onehot[test_idx] = ty
    labels = np.full(n, -1, dtype=np.int64)
    labeled = onehot.sum(axis=1) > 0
    labels[labeled] = onehot[labeled].argmax(axis=1)

    edges = []
    for u, nbrs in parts["graph"].items():
        for v in nbrs:
            if 0 <= u < n and 0 <= v < n and u != v:
                edges.append((int(u), int(v)))

    n_train = y.shape[0]
    val_end = min(n_train + 500, allx.shape[0])  # standard 500, bounded by the pool
    splits = {
        "train": list(range(n_train)),
        "val": list(range(n_train, val_end)),
        "test": sorted(int(i) for i in test_idx),
    }
    return save_canonical(
        Path(out_dir),
        n=n,
        f=f,
        C=C,
        name=name,
        edges=edges,
        features=features,
        labels=labels,
        splits=splits,
    )


def _read_maybe_gz(base: Path, **kw):
    for candidate in (base, base.with_suffix(base.suffix + ".gz")):
        if candidate.exists():
            opener = gzip.open if candidate.suffix == ".gz" else open
            with opener(candidate, "rt") as fh:
                return pd.read_csv(fh, header=None, **kw)
    raise MissingFileError("expected raw file (or .gz)", path=str(base))


def convert_ogb(raw_dir, out_dir, name: str | None = None) -> Path:
    """Convert an OGB node-property directory to a canonical directory.

    Expects ``raw/edge.csv``, ``raw/node-feat.csv``, ``raw/node-label.csv``
    (each optionally gzipped) and one split directory under ``split/`` with
    ``train.csv``, ``valid.csv``, ``test.csv``.  Node ids are already
    0..n-1, so the conversion is a pure re-serialization.
    """
    root = Path(raw_dir)
    edge = _read_maybe_gz(root / "raw" / "edge.csv").to_numpy(dtype=np.int64)
    feats = _read_maybe_gz(root / "raw" / "node-feat.csv").to_numpy(dtype=np.float64)
    label = _read_maybe_gz(root / "raw" / "node-label.csv").to_numpy(dtype=np.int64)
    n, f = feats.shape
    labels = label.reshape(-1)
    if labels.shape[0] != n:
        raise ShapeMismatchError(
            f"{labels.shape[0]} labels for {n} nodes", path=str(root)
        )
    split_root = root / "split"
    if not split_root.exists():
        raise MissingFileError("split directory missing", path=str(split_root))
    schemes = sorted(p for p in split_root.iterdir() if p.is_dir())
    if not schemes:
        raise MissingFileError("no split scheme found", path=str(split_root))
    scheme = schemes[0]
    splits = {}
    for ours, theirs in (("train", "train"), ("val", "valid"), ("test", "test")):
        idx = _read_maybe_gz(scheme / f"{theirs}.csv").to_numpy(dtype=np.int64)
        splits[ours] = sorted(int(i) for i in idx.reshape(-1))
    C = int(labels.max()) + 1
    return save_canonical(
        Path(out_dir),
        n=n,
        f=f,
        C=C,
        name=name or root.name,
        edges=[(int(u), int(v)) for u, v in edge],
        features=feats,
        labels=labels,
        splits=splits,
    )


# -------------------------------------------------------------------- metrics


def micro_macro_f1(predicted, true, index_set, num_classes: int | None = None):
    """Micro and macro F1 for single-label multiclass prediction.

    Micro-F1 over single-label predictions equals accuracy.  Macro-F1
    averages per-class F1 over all ``num_classes`` classes; a class absent
    from both predictions and truth contributes 0.
    """
    idx = np.asarray(index_set, dtype=np.int64)
    if idx.size == 0:
        raise InputError("empty index set")
    p = np.asarray(predicted)[idx]
    t = np.asarray(true)[idx]
    if num_classes is None:
        num_classes = int(max(p.max(), t.max())) + 1
    micro = float(np.mean(p == t))
    f1s = np.zeros(num_classes)
    for c in range(num_classes):
        tp = float(np.sum((p == c) & (t == c)))
        fp = float(np.sum((p == c) & (t != c)))
        fn = float(np.sum((p != c) & (t == c)))
        denom = 2 * tp + fp + fn
        f1s[c] = (2 * tp / denom) if denom > 0 else 0.0
    return micro, float(f1s.mean())
