"""Operator-facing command surface.

Commands: ``convert``, ``precompute``, ``train``, ``eval``, ``sweep``,
``gradcheck``.  Every training knob is available as a flag and as a line in
a flat ``key=value`` config file (flag wins over file, file wins over
default); the effective configuration is echoed into the output directory
so runs are reproducible from their artifacts alone.

Exit codes: 0 success, 1 usage, 2 data problem, 3 divergence or a failed
numeric check.  ``HOPFUSE_DATA_ROOT`` provides the default directory for
bare dataset names.
"""

from __future__ import annotations

import argparse
import hashlib
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import fields
from pathlib import Path

import numpy as np

from .data import convert_ogb, convert_planetoid, load_canonical
from .errors import DataError, DivergenceError, InputError, StaleCacheError
from .hops import (
    NORM_MODES,
    build_hop_cache_streaming,
    load_hop_cache,
)
from .model import load_checkpoint, save_checkpoint
from .training import TrainConfig, evaluate, gradient_check, train_loop

_CONFIG_TYPES = {
    f.name: (bool if f.type == "bool" else type(f.default))
    for f in fields(TrainConfig)
}

GRADCHECK_THRESHOLD = 1e-4
GRADCHECK_SEEDS = (101, 202, 303)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise InputError(f"not a boolean: {text!r}")


def _read_config_file(path) -> dict:
    out = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            body = line.split("#", 1)[0].strip()
            if not body:
                continue
            if "=" not in body:
                raise DataError("expected key=value", path=str(path), line=lineno)
            key, value = (part.strip() for part in body.split("=", 1))
            if key not in _CONFIG_TYPES:
                raise DataError(f"unknown config key {key!r}", path=str(path),
                                line=lineno)
            caster = _CONFIG_TYPES[key]
            out[key] = _parse_bool(value) if caster is bool else caster(value)
    return out


def _add_config_flags(parser):
    for f in fields(TrainConfig):
        flag = "--" + f.name.replace("_", "-")
        if _CONFIG_TYPES[f.name] is bool:
            parser.add_argument(flag, dest=f.name, default=None,
                                type=_parse_bool, metavar="BOOL")
        else:
            parser.add_argument(flag, dest=f.name, default=None,
                                type=_CONFIG_TYPES[f.name])
    parser.add_argument("--config", default=None, help="key=value config file")


def build_train_config(args) -> TrainConfig:
    merged = {}
    if getattr(args, "config", None):
        merged.update(_read_config_file(args.config))
    for f in fields(TrainConfig):
        cli_value = getattr(args, f.name, None)
        if cli_value is not None:
            merged[f.name] = cli_value
    cfg = TrainConfig(**merged)
    cfg.validate()
    return cfg


def _config_lines(cfg: TrainConfig) -> str:
    pairs = [(f.name, getattr(cfg, f.name)) for f in fields(TrainConfig)]
    return "".join(f"{k}={v}\n" for k, v in sorted(pairs))


def _resolve_data(arg: str) -> Path:
    p = Path(arg)
    if p.exists():
        return p
    root = os.environ.get("HOPFUSE_DATA_ROOT")
    if root:
        candidate = Path(root) / arg
        if candidate.exists():
            return candidate
    raise DataError("dataset directory not found", path=arg)


def _default_cache_path(data_dir: Path, K: int, norm: str) -> Path:
    return data_dir / f"hops_K{K}_{norm}.bin"


def _load_or_build_cache(data_dir, dataset, K, norm, cache_arg=None, build=True):
    path = Path(cache_arg) if cache_arg else _default_cache_path(data_dir, K, norm)
    if path.exists():
        hopset, cached_hash = load_hop_cache(path)
        if cached_hash != dataset.edge_hash:
            raise StaleCacheError(
                "hop cache was built from a different edge list", path=str(path)
            )
        if hopset.K != K:
            raise StaleCacheError(
                f"hop cache has K={hopset.K}, requested K={K}", path=str(path)
            )
        if hopset.norm_mode != norm:
            raise StaleCacheError(
                f"hop cache normalization {hopset.norm_mode!r} != {norm!r}",
                path=str(path),
            )
        return hopset, path
    if not build:
        raise DataError("hop cache missing", path=str(path))
    build_hop_cache_streaming(dataset.adjacency, K, norm, path, dataset.edge_hash)
    hopset, _ = load_hop_cache(path)
    return hopset, path


# ------------------------------------------------------------------- commands


def cmd_convert(args) -> int:
    if args.format == "planetoid":
        out = convert_planetoid(args.raw, args.out, args.name)
    else:
        out = convert_ogb(args.raw, args.out, name=args.name)
    print(f"wrote canonical dataset to {out}")
    return 0


def cmd_precompute(args) -> int:
    data_dir = _resolve_data(args.data)
    dataset = load_canonical(data_dir)
    path = Path(args.out) if args.out else _default_cache_path(
        data_dir, args.K, args.normalize
    )
    t0 = time.perf_counter()
    nnzs = build_hop_cache_streaming(
        dataset.adjacency, args.K, args.normalize, path, dataset.edge_hash
    )
    total_s = time.perf_counter() - t0
    for i in range(args.K):
        print(f"hop {i + 1}: nnz={nnzs[i]}")
    print(f"two-hop reachability: nnz={nnzs[-1]}")
    digest = _file_sha256(path)
    print(f"cache: {path} sha256={digest}")
    print(f"total {total_s:.3f}s")
    return 0


def _file_sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for piece in iter(lambda: fh.read(1 << 22), b""):
            h.update(piece)
    return h.hexdigest()


def _train_once(data_dir, cfg, cache_arg=None):
    dataset = load_canonical(data_dir)
    hopset, _ = _load_or_build_cache(
        data_dir, dataset, cfg.K, cfg.normalize, cache_arg
    )
    t0 = time.perf_counter()
    result = train_loop(dataset, hopset, cfg)
    wall = time.perf_counter() - t0
    test_micro, test_macro = evaluate(
        dataset, hopset, result.params, cfg, retention_m=result.retention_m,
        split="test",
    )
    return dataset, hopset, result, wall, (test_micro, test_macro)


def _write_history(path, result, K):
    hop_cols = "".join(f"\tm_{i}" for i in range(2, K + 1))
    with open(path, "w") as fh:
        fh.write(
            "epoch\tcla\tlcs\tsc\ttotal\tval_micro_f1\tval_macro_f1" + hop_cols + "\n"
        )
        for rec in result.history:
            L = rec.loss
            ms = "".join(f"\t{rec.retention_m[i - 1]}" for i in range(2, K + 1))
            fh.write(
                f"{rec.epoch}\t{L.classification!r}\t{L.relevance!r}\t"
                f"{L.sparsity!r}\t{L.total!r}\t{rec.val_micro!r}\t{rec.val_macro!r}"
                f"{ms}\n"
            )


def cmd_train(args) -> int:
    cfg = build_train_config(args)
    data_dir = _resolve_data(args.data)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    dataset, hopset, result, wall, (tmi, tma) = _train_once(
        data_dir, cfg, args.cache
    )
    (out_dir / "effective_config.txt").write_text(_config_lines(cfg))
    _write_history(out_dir / "history.tsv", result, cfg.K)
    save_checkpoint(
        out_dir / "checkpoint.bin", result.params, seed=cfg.seed,
        retention_m=result.retention_m,
    )
    if args.dump_masks and result.params.mode == "full" and cfg.K >= 2:
        from .masking import RetentionSchedule, build_mask_state, dump_mask_tsv
        from .training import _prepare_features

        x = _prepare_features(dataset, cfg)
        mask = build_mask_state(
            x, result.params.w1, result.params.w2, hopset,
            RetentionSchedule(m=np.asarray(result.retention_m)),
        )
        for path in dump_mask_tsv(mask, out_dir / "masks"):
            print(f"mask dump: {path}")
    best = result.history[result.best_epoch]
    print(f"dataset {dataset.name}: {len(result.history)} epochs in {wall:.1f}s")
    print(
        f"best val (epoch {result.best_epoch}): "
        f"micro-F1 {100 * best.val_micro:.2f}%  macro-F1 {100 * best.val_macro:.2f}%"
    )
    print(f"test: micro-F1 {100 * tmi:.2f}%  macro-F1 {100 * tma:.2f}%")
    return 0


def cmd_eval(args) -> int:
    cfg = build_train_config(args)
    data_dir = _resolve_data(args.data)
    dataset = load_canonical(data_dir)
    params, seed, retention = load_checkpoint(args.checkpoint)
    cfg.mode = params.mode
    cfg.K = params.hop_logits.shape[0]
    cfg.beta = params.beta
    hopset, _ = _load_or_build_cache(data_dir, dataset, cfg.K, cfg.normalize,
                                     args.cache)
    micro, macro = evaluate(
        dataset, hopset, params, cfg, retention_m=retention, split=args.split
    )
    print(
        f"{dataset.name} {args.split}: micro-F1 {100 * micro:.2f}%  "
        f"macro-F1 {100 * macro:.2f}%"
    )
    return 0


_SWEEP_AXES = ("K", "beta", "lambda1", "lambda2")


def _sweep_one(data_dir_str: str, cfg: TrainConfig, cache_arg):
    data_dir = Path(data_dir_str)
    t0 = time.perf_counter()
    _, _, result, _, (micro, macro) = _train_once(data_dir, cfg, cache_arg)
    return micro, macro, time.perf_counter() - t0


def cmd_sweep(args) -> int:
    cfg = build_train_config(args)
    data_dir = _resolve_data(args.data)
    values = [v for v in args.values.split(",") if v]
    if not values:
        raise InputError("sweep values must be non-empty")
    configs = []
    for raw in values:
        value = int(raw) if args.axis == "K" else float(raw)
        cfg_i = TrainConfig(**{f.name: getattr(cfg, f.name) for f in fields(TrainConfig)})
        setattr(cfg_i, args.axis, value)
        cfg_i.validate()
        configs.append((value, cfg_i))
    rows = []
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            futures = [
                pool.submit(_sweep_one, str(data_dir), c, args.cache)
                for _, c in configs
            ]
            for (value, _), fut in zip(configs, futures):
                micro, macro, wall = fut.result()
                rows.append((value, micro, macro, wall))
    else:
        for value, cfg_i in configs:
            micro, macro, wall = _sweep_one(str(data_dir), cfg_i, args.cache)
            rows.append((value, micro, macro, wall))
    out = Path(args.out) if args.out else None
    lines = ["value\tmicro_f1\tmacro_f1\twall_s"]
    for value, micro, macro, wall in rows:
        lines.append(f"{value}\t{100 * micro:.2f}\t{100 * macro:.2f}\t{wall:.3f}")
    text = "\n".join(lines) + "\n"
    if out:
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text)
    sys.stdout.write(text)
    return 0


def cmd_gradcheck(args) -> int:
    if args.precision == "f32":
        print("warning: the 1e-4 threshold is calibrated for double precision; "
              "single-precision results are unreliable")
    worst = 0.0
    for seed in GRADCHECK_SEEDS:
        errs = gradient_check(seed, mode=args.mode, normalize=args.normalize)
        for name, err in sorted(errs.items()):
            print(f"seed {seed} {name:12s} max-rel-err {err:.3e}")
            worst = max(worst, err)
    status = "PASS" if worst < GRADCHECK_THRESHOLD else "FAIL"
    print(f"gradcheck {status}: worst {worst:.3e} (threshold {GRADCHECK_THRESHOLD})")
    return 0 if status == "PASS" else 3


def make_parser() -> _Parser:
    parser = _Parser(prog="hopfuse", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("convert", help="convert a public dataset layout")
    p.add_argument("format", choices=("planetoid", "ogb"))
    p.add_argument("--raw", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--name", default=None)
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("precompute", help="build and store the hop cache")
    p.add_argument("--data", required=True)
    p.add_argument("--K", type=int, required=True)
    p.add_argument("--normalize", choices=NORM_MODES, default="per_hop")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_precompute)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--data", required=True)
    p.add_argument("--cache", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--dump-masks", action="store_true",
                   help="write per-hop score/retention TSVs next to the checkpoint")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--cache", default=None)
    p.add_argument("--split", choices=("train", "val", "test"), default="test")
    _add_config_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="train/eval once per axis value")
    p.add_argument("--data", required=True)
    p.add_argument("--axis", choices=_SWEEP_AXES, required=True)
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--out", default=None, help="TSV output path")
    p.add_argument("--cache", default=None)
    p.add_argument("--jobs", type=int, default=1)
    _add_config_flags(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    p.add_argument("--mode", choices=("base", "full"), default="full")
    p.add_argument("--normalize", choices=NORM_MODES, default="per_hop")
    p.add_argument("--precision", choices=("f64", "f32"), default="f64")
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (DataError, InputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except DivergenceError as exc:
        print(f"divergence: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
