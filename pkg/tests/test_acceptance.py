"""Release acceptance criteria.

One test per criterion; each prints a single ``ACCEPTANCE n: PASS/FAIL``
line (run with ``-s`` to see them live).  Benchmark-dataset criteria skip
with an explicit reason when the canonical datasets are not present under
``HOPFUSE_DATA_ROOT``.
"""

import os
import time
from pathlib import Path

import numpy as np
import pytest
from scipy.sparse.csgraph import shortest_path

import hopfuse.cli as cli
from hopfuse.data import load_canonical
from hopfuse.hops import build_hopset
from hopfuse.masking import neighbor_scores
from hopfuse.training import TrainConfig, evaluate, gradient_check, train_loop

from conftest import random_graph, support_set
from test_masking import dense_score_oracle

pytestmark = pytest.mark.acceptance

CANON = Path(os.environ.get("HOPFUSE_DATA_ROOT", "/root/data/canonical"))


def _have(name):
    return (CANON / name / "meta.json").exists()


def needs(name):
    return pytest.mark.skipif(
        not _have(name),
        reason=f"canonical {name} dataset not present under {CANON} "
        "(no network in this environment? run `hopfuse convert planetoid` first)",
    )


def report(num, label, ok, detail):
    print(f"ACCEPTANCE {num} [{label}]: {'PASS' if ok else 'FAIL'} ({detail})")
    assert ok, f"criterion {num} ({label}): {detail}"


# Tuned within the stated search grids: lr/dropout/weight-decay/hidden from
# the published ranges, K adjustable, row normalization in the tuning budget.
TUNED = {
    "cora": dict(
        K=4, d=256, d_f=64, learning_rate=0.01, dropout=0.5, weight_decay=5e-4,
        beta=0.5, lambda1=0.005, lambda2=0.01, m_init=16, epochs=300,
        early_stop_patience=50, row_normalize=True, seed=0,
    ),
    "citeseer": dict(
        K=2, d=256, d_f=64, learning_rate=0.01, dropout=0.5, weight_decay=1e-3,
        beta=0.5, lambda1=0.005, lambda2=0.01, m_init=16, epochs=300,
        early_stop_patience=50, row_normalize=True, seed=0,
    ),
    "pubmed": dict(
        K=2, d=256, d_f=64, learning_rate=0.01, dropout=0.5, weight_decay=5e-4,
        beta=0.5, lambda1=0.005, lambda2=0.01, m_init=16, epochs=300,
        early_stop_patience=50, row_normalize=True, seed=0,
    ),
}

THRESHOLDS = {"cora": 0.82, "citeseer": 0.715, "pubmed": 0.795}

_run_cache: dict = {}


def run_benchmark(name, mode, **overrides):
    """Train once per (dataset, mode, overrides) and memoize the outcome."""
    key = (name, mode, tuple(sorted(overrides.items())))
    if key in _run_cache:
        return _run_cache[key]
    data_dir = CANON / name
    dataset = load_canonical(data_dir)
    cfg = TrainConfig(mode=mode, **{**TUNED[name], **overrides})
    hopset, _ = cli._load_or_build_cache(data_dir, dataset, cfg.K, cfg.normalize)
    t0 = time.perf_counter()
    result = train_loop(dataset, hopset, cfg)
    wall = time.perf_counter() - t0
    micro, macro = evaluate(
        dataset, hopset, result.params, cfg, retention_m=result.retention_m,
        split="test",
    )
    out = {"micro": micro, "macro": macro, "wall": wall, "result": result}
    _run_cache[key] = out
    return out


# ----------------------------------------------------------------- criteria


@needs("cora")
def test_criterion_1_cora_reproduction():
    out = run_benchmark("cora", "full")
    ok = out["micro"] >= THRESHOLDS["cora"] and out["wall"] <= 600
    report(
        1, "cora full-model accuracy", ok,
        f"test micro-F1 {100 * out['micro']:.2f}% (need >= 82.00%), "
        f"wall {out['wall']:.0f}s (budget 600s)",
    )


@needs("citeseer")
def test_criterion_2a_citeseer():
    out = run_benchmark("citeseer", "full")
    ok = out["micro"] >= THRESHOLDS["citeseer"] and out["wall"] <= 600
    report(
        2, "citeseer full-model accuracy", ok,
        f"test micro-F1 {100 * out['micro']:.2f}% (need >= 71.50%), "
        f"wall {out['wall']:.0f}s",
    )


@needs("pubmed")
def test_criterion_2b_pubmed():
    out = run_benchmark("pubmed", "full")
    ok = out["micro"] >= THRESHOLDS["pubmed"] and out["wall"] <= 600
    report(
        2, "pubmed full-model accuracy", ok,
        f"test micro-F1 {100 * out['micro']:.2f}% (need >= 79.50%), "
        f"wall {out['wall']:.0f}s",
    )


@pytest.mark.parametrize("name", ["cora", "citeseer", "pubmed"])
def test_criterion_3_base_vs_full(name):
    if not _have(name):
        pytest.skip(f"{name} not available")
    full = run_benchmark(name, "full")
    base = run_benchmark(name, "base")
    ok = full["micro"] >= base["micro"] and base["wall"] <= full["wall"]
    report(
        3, f"{name} base-vs-full ordering", ok,
        f"full {100 * full['micro']:.2f}% in {full['wall']:.0f}s vs "
        f"base {100 * base['micro']:.2f}% in {base['wall']:.0f}s",
    )


def test_criterion_4_gradient_correctness():
    worst = 0.0
    worst_block = ""
    for seed in cli.GRADCHECK_SEEDS:
        errs = gradient_check(seed, mode="full", normalize="per_hop")
        for block, err in errs.items():
            if err > worst:
                worst, worst_block = err, f"seed{seed}/{block}"
    ok = worst < 1e-4
    report(4, "gradient correctness", ok,
           f"worst max-rel-err {worst:.3e} at {worst_block}, threshold 1e-4")


def test_criterion_5_hop_distillation_properties():
    rng = np.random.default_rng(20240808)
    violations = 0
    for trial in range(200):
        n = int(rng.integers(4, 65))
        p = float(rng.choice([0.05, 0.1, 0.2]))
        adj = random_graph(rng, n, p)
        K = int(rng.integers(2, 6))
        hs = build_hopset(adj, K=K)
        dist = shortest_path(adj.to_scipy().astype(float), unweighted=True)
        union = set()
        for i, pure in enumerate(hs.pure, start=1):
            s = support_set(pure)
            expected = {
                (u, v)
                for u in range(n)
                for v in range(n)
                if u != v and np.isfinite(dist[u, v]) and int(dist[u, v]) == i
            }
            if s != expected or (s & union) or any(u == v for u, v in s):
                violations += 1
            union |= s
        reach = {
            (u, v)
            for u in range(n)
            for v in range(n)
            if u != v and np.isfinite(dist[u, v]) and dist[u, v] <= K
        }
        if union != reach:
            violations += 1
    ok = violations == 0
    report(5, "hop distillation properties", ok,
           f"{violations} violations over 200 random graphs")


def test_criterion_6_score_oracle_equivalence():
    rng = np.random.default_rng(77)
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(2, 17))
        adj = random_graph(rng, n, float(rng.uniform(0.2, 0.7)))
        f = int(rng.integers(2, 9))
        d_f = int(rng.integers(1, 6))
        x = rng.standard_normal((n, f))
        w1 = rng.standard_normal((d_f, f))
        w2 = rng.standard_normal((d_f, f))
        got = neighbor_scores(x, w1, w2, adj).to_dense()
        ref = dense_score_oracle(x, w1, w2, adj)
        worst = max(worst, float(np.abs(got - ref).max()))
    ok = worst < 1e-10
    report(6, "score oracle equivalence", ok,
           f"worst |sparse - dense| = {worst:.2e} over 100 instances (tol 1e-10)")


@needs("cora")
@pytest.mark.slow
def test_criterion_7_beta_sweep_interior_maximum():
    betas = [round(0.1 * i, 1) for i in range(1, 10)]
    micros = [run_benchmark("cora", "full", beta=b)["micro"] for b in betas]
    best = int(np.argmax(micros))
    ok = 0 < best < len(betas) - 1
    detail = ", ".join(f"{b}:{100 * m:.1f}" for b, m in zip(betas, micros))
    report(7, "beta sweep shape", ok, f"best at beta={betas[best]} [{detail}]")


@needs("cora")
@pytest.mark.slow
def test_criterion_8_hop_depth_resilience():
    ks = [2, 4, 6, 8, 10]
    micros = [run_benchmark("cora", "full", K=k)["micro"] for k in ks]
    spread = max(micros) - min(micros)
    ok = spread <= 0.05
    detail = ", ".join(f"K{k}:{100 * m:.1f}" for k, m in zip(ks, micros))
    report(8, "hop-depth resilience", ok,
           f"spread {100 * spread:.1f} points (allow 5.0) [{detail}]")


@needs("cora")
@pytest.mark.slow
def test_criterion_9_sparsity_behavior():
    final_counts = {}
    for lam2 in (0.05, 0.0005):
        out = run_benchmark(
            "cora", "full", lambda2=lam2, retention_rule="shrink_on_plateau",
            patience=10, epochs=150,
        )
        sc = [rec.loss.sparsity for rec in out["result"].history]
        non_increasing = all(a >= b for a, b in zip(sc, sc[1:]))
        final_counts[lam2] = sc[-1]
        assert non_increasing, f"sc_value increased during lambda2={lam2} run"
    ok = final_counts[0.05] <= final_counts[0.0005]
    report(
        9, "sparsity behavior", ok,
        f"sc non-increasing in both runs; final retained {final_counts[0.05]:.0f} "
        f"(lambda2=0.05) vs {final_counts[0.0005]:.0f} (lambda2=0.0005)",
    )


@needs("pubmed")
@pytest.mark.slow
def test_criterion_10_precompute_scaling(tmp_path):
    times = {}
    for K in (1, 2, 4, 8):
        out = tmp_path / f"pubmed_K{K}.bin"
        t0 = time.perf_counter()
        rc = cli.main(
            ["precompute", "--data", str(CANON / "pubmed"), "--K", str(K),
             "--out", str(out)]
        )
        times[K] = time.perf_counter() - t0
        assert rc == 0
        out.unlink()
    ratio = times[8] / times[4]
    ok = ratio < 4.0
    detail = ", ".join(f"K{k}:{t:.1f}s" for k, t in times.items())
    report(10, "precompute scaling", ok, f"t(8)/t(4) = {ratio:.2f} (need < 4) [{detail}]")


@needs("cora")
def test_criterion_11_determinism(tmp_path):
    flags = [
        "--K", "3", "--epochs", "25", "--d", "32", "--seed", "11",
        "--dropout", "0.3", "--row-normalize", "true",
        "--early-stop-patience", "0",
    ]
    for name in ("r1", "r2"):
        rc = cli.main(
            ["train", "--data", str(CANON / "cora"), "--out",
             str(tmp_path / name)] + flags
        )
        assert rc == 0
    h1 = (tmp_path / "r1" / "history.tsv").read_bytes()
    h2 = (tmp_path / "r2" / "history.tsv").read_bytes()
    c1 = (tmp_path / "r1" / "checkpoint.bin").read_bytes()
    c2 = (tmp_path / "r2" / "checkpoint.bin").read_bytes()
    ok = h1 == h2 and c1 == c2
    report(11, "determinism", ok,
           f"history identical: {h1 == h2}; checkpoint identical: {c1 == c2}")
