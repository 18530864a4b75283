"""Acceptance gate: one test per criterion, each at its stated tolerance.

Every test records a pass/fail line that the terminal summary prints.
"""

import csv
import json
import math
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE
from sofa.cli import main as cli_main
from sofa.core import Distribution, QuantMatrix, WorkloadSpec, generate_workload
from sofa.costmodel import Dims, analytic_report, footprint, weighted_cost
from sofa.dlzs import count_leading_zeros, count_leading_zeros_direct, dlzs_matmul, encode_lz
from sofa.dse import DseConfig, SearchSpace, l_cmp, l_exp, objective, run_dse
from sofa.oracles import dense_attention, exact_topk, grid_minimum, lz_error_table
from sofa.pipeline import PipelineConfig, run_pipeline
from sofa.rass import (GOLDEN_CAPACITY, GOLDEN_DEMANDS, baseline_fetches, build_demand_map,
                       schedule_rass)
from sofa.sads import SadsConfig, sads_topk, select_topk_segment
from sofa.sufa import (flash_attention_reference, flash_attention_tally, sufa_ascending,
                       sufa_descending, vanilla_tally)


def record(n: int, ok: bool, detail: str):
    ACCEPTANCE[n] = (bool(ok), detail)
    print(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, detail


def test_criterion_01_sufa_oracle_equivalence():
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    worst = 0.0
    for i in range(1000):
        S = int(rng.integers(1, 513))
        d = int(rng.integers(1, 65))
        q = rng.normal(size=d)
        K = rng.normal(size=(S, d)) * rng.uniform(0.1, 3.0)
        V = rng.normal(size=(S, int(rng.integers(1, 9))))
        sel = np.sort(rng.choice(S, size=int(rng.integers(1, S + 1)), replace=False))
        s = K[sel] @ q
        mode = i % 4
        if mode == 0:
            order = sel[np.argsort(-s, kind="stable")]  # correct descending
        elif mode == 1:
            order = sel[np.argsort(s, kind="stable")]  # fully reversed
        elif mode == 2:
            order = rng.permutation(sel)
        else:
            # true maximum placed last
            order = sel[np.argsort(-s, kind="stable")]
            order = np.concatenate([order[1:], order[:1]])
        o = sufa_descending(q, K[order], V[order]).o
        ref = dense_attention(q[None], K, V, mask=[sel])[0]
        err = np.abs(o - ref).max() / max(np.abs(ref).max(), 1e-300)
        worst = max(worst, err)
    dt = time.perf_counter() - t0
    record(1, worst <= 1e-5 and dt < 60,
           f"max rel err {worst:.2e} (tol 1e-5) over 1000 instances in {dt:.1f}s (limit 60s)")


def test_criterion_02_sufa_complexity():
    rng = np.random.default_rng(7)
    lines, ok = [], True
    for S in (1024, 2048, 4096):
        n = S // 4
        d = 32
        q = rng.normal(size=d)
        K = rng.normal(size=(n, d))
        V = rng.normal(size=(n, d))
        order = np.argsort(-(K @ q), kind="stable")
        desc = sufa_descending(q, K[order], V[order]).tally
        asc = sufa_ascending(q, K[order[::-1]], V[order[::-1]]).tally
        _, fa = flash_attention_reference(q[None], K, V, 16, variant="fa1")
        r_fa = 1 - weighted_cost(desc) / weighted_cost(fa)
        r_asc = 1 - weighted_cost(desc) / weighted_cost(asc)
        ok &= abs(r_fa - 0.25) <= 0.10 and abs(r_asc - 0.11) <= 0.05
        w64 = (1 - weighted_cost(desc, lanes=64) / weighted_cost(fa, lanes=64),
               1 - weighted_cost(desc, lanes=64) / weighted_cost(asc, lanes=64))
        lines.append(f"S={S}: vs FA {r_fa:.1%}, vs asc {r_asc:.1%} "
                     f"(64-lane: {w64[0]:.1%}/{w64[1]:.1%})")
    record(2, ok, "; ".join(lines) + " [targets 25%±10, 11%±5]")


def test_criterion_03_fa2_cost_trend():
    S = 2048
    excess = [flash_attention_tally(S, S, S // tc).exp - vanilla_tally(S, S).exp
              for tc in (2, 4, 8, 16, 32, 64, 128, 256)]
    trend = all(b > a for a, b in zip(excess, excess[1:]))
    at16 = flash_attention_tally(S, S, 16).exp - vanilla_tally(S, S).exp
    within = 9e6 / 3 <= at16 <= 9e6 * 3
    record(3, trend and within,
           f"excess exp strictly increasing in T_c: {trend}; at S=2048,B_c=16 excess={at16} "
           f"(target 9e6 within x3: {within})")


def test_criterion_04_dlzs_error_bound():
    t0 = time.perf_counter()
    vals = np.array([v for v in range(-127, 128) if v != 0])
    a = QuantMatrix(vals[:, None], 8)
    b = encode_lz(QuantMatrix(vals[None, :], 8))
    prod = dlzs_matmul(a, b)
    exact = np.outer(vals, vals)
    ratio = prod.out.data * (1 << prod.shift) / exact
    in_range = bool(np.all((ratio >= 1.0) & (ratio < 2.0)))
    sign_ok = bool(np.all(np.sign(prod.out.data) == np.sign(exact)))
    table = lz_error_table(8)
    agree = (ratio.min(), ratio.max()) == (table["min_ratio"], table["max_ratio"])
    clz_ok = all(count_leading_zeros(m, 16) == count_leading_zeros_direct(m, 16)
                 for m in range(1 << 15))
    dt = time.perf_counter() - t0
    n_at_2 = int(np.sum(ratio >= 2.0))
    record(4, in_range and sign_ok and clz_ok and agree and dt < 10,
           f"ratio range [{ratio.min():.5f}, {ratio.max():.5f}] in [1,2): {in_range} "
           f"({n_at_2} pairs at 2.0); signs {sign_ok}; 16-bit LZC {clz_ok}; "
           f"oracle agrees {agree}; {dt:.1f}s")


def test_criterion_05_sads():
    rng = np.random.default_rng(5)
    mism = 0
    for _ in range(10_000):
        L = int(rng.integers(1, 100))
        m = int(rng.integers(1, 17))
        row = rng.integers(-20, 21, size=L).astype(float)  # ties on purpose
        got = {i for i, _ in select_topk_segment(row, m, SadsConfig(k=m))}
        mism += got != exact_topk(row, m)
    missed = 0
    S = 128
    for n in (2, 4, 8, 16):
        base = rng.normal(size=S)
        for pos in range(S):
            row = base.copy()
            row[pos] = base.max() + 0.5
            missed += pos not in set(sads_topk(row, SadsConfig(num_segments=n, k=n)).indices)
    record(5, mism == 0 and missed == 0,
           f"segment top-m mismatches {mism}/10000; missed strict maxima {missed}/{4 * S}")


def test_criterion_06_rass():
    plan = schedule_rass(build_demand_map(GOLDEN_DEMANDS), GOLDEN_CAPACITY)
    base = baseline_fetches(GOLDEN_DEMANDS, GOLDEN_CAPACITY)
    golden = plan.fetches * 3 == base * 2
    rng = np.random.default_rng(6)
    worse = 0
    for _ in range(1000):
        T, S, cap = int(rng.integers(1, 9)), int(rng.integers(1, 33)), int(rng.integers(1, 9))
        sets = [sorted(rng.choice(S, size=int(rng.integers(1, S + 1)), replace=False))
                for _ in range(T)]
        worse += schedule_rass(build_demand_map(sets), cap).fetches > baseline_fetches(sets, cap)
    record(6, golden and worse == 0,
           f"golden fetches {plan.fetches}:{base} (2:3 required); worse-than-baseline {worse}/1000")


def _planted(space, seed):
    r = np.random.default_rng(seed + 1000)
    c = r.uniform(0, 1, len(space.axes()))
    w = r.uniform(0.5, 2, len(space.axes()))

    def f(R):
        x = space.normalized(R)
        return 1.0 + float((w * (x - c) ** 2).sum()) + 0.05 * float(np.sin(7 * x).sum())
    return f


def test_criterion_07_dse():
    spaces = [SearchSpace((1024,)), SearchSpace((1024, 2048), tie_k=True)]
    lines, ok = [], True
    for space in spaces:
        hits, mono = 0, True
        for seed in range(20):
            f = _planted(space, seed)
            cfg = DseConfig(alpha=0.01, beta=0.001, seed=seed)
            res = run_dse(space, cfg, f)
            _, gmin = grid_minimum(space.axes(), lambda c: objective(
                space.to_point(c), f, cfg.alpha, cfg.beta, space).J)
            hits += res.best.J <= gmin * 1.05
            mono &= all(b <= a for a, b in zip(res.incumbent, res.incumbent[1:]))
        ok &= hits >= 19 and mono
        lines.append(f"{space.size}-point grid: {hits}/20 within 5%, trace monotone {mono}")
    R = ((16, 0.25),)
    forms = l_cmp(R, (1024,)) == 1 / 16 and l_exp(R, (1024,)) == 16
    record(7, ok and forms, "; ".join(lines) + f"; closed forms 1/16 and 16: {forms}")


def test_criterion_08_memory_model():
    fp = footprint("intermediate", Dims(512, 2048))
    fp_ok = abs(fp / 5e6 - 1) <= 0.2
    mats = [analytic_report(Dims(T, 2048), "standard").mat for T in (32, 64, 128, 256, 512)]
    mono = all(b > a for a, b in zip(mats, mats[1:]))
    record(8, fp_ok and mono and mats[-1] >= 0.55,
           f"footprint {fp / 1e6:.2f} MB (5 MB ±20%); MAT T=32..512 "
           f"{', '.join(f'{m:.2f}' for m in mats)} monotone {mono}, at 512 >= 0.55")


def test_criterion_09_substituted_sweeps():
    ks = [round(0.05 * i, 2) for i in range(1, 11)]
    lines, ok = [], True
    for dist in Distribution:
        rec, red = [], []
        for seed in range(10):
            wl = generate_workload(WorkloadSpec(256, 64, 32, distribution=dist, seed=seed))
            runs = [run_pipeline(PipelineConfig(k=k), wl) for k in ks]
            rec.append([r.recall for r in runs])
            red.append([r.reductions["attention_gross"] for r in runs])
        rec_m, red_m = np.mean(rec, 0), np.mean(red, 0)
        mono_rec = bool(np.all(np.diff(rec_m) >= 0))
        mono_red = bool(np.all(np.diff(red_m) < 0))
        ok &= mono_rec and mono_red
        lines.append(f"{dist.value}: recall {rec_m[0]:.2f}->{rec_m[-1]:.2f} non-decreasing "
                     f"{mono_rec}, reduction {red_m[0]:.2f}->{red_m[-1]:.2f} falls with k {mono_red}")
    record(9, ok, "; ".join(lines))


def test_criterion_10_cli_determinism(tmp_path):
    cfg = tmp_path / "dse.json"
    cfg.write_text(json.dumps({"dse": {"seq_lens": [128], "max_iter": 4, "init_samples": 3},
                               "workload": {"head_dim": 16, "num_queries": 4}}))
    commands = [["run"], ["figdata", "fa2_cost"], ["figdata", "mat_vs_parallelism"],
                ["figdata", "complexity_reduction"], ["figdata", "recall_vs_k"],
                ["dse", "--config", str(cfg)], ["bench"]]
    diffs = []
    for cmd in commands:
        out = tmp_path / "_".join(c for c in cmd if not c.startswith("/"))[:40]
        blobs = []
        for _ in range(2):
            assert cli_main(cmd + ["--seed", "11", "--out", str(out)]) == 0
            blobs.append({f.name: f.read_bytes() for f in sorted(out.iterdir())})
        if blobs[0] != blobs[1]:
            diffs.append(cmd[0] + (":" + cmd[1] if len(cmd) > 1 else ""))
    record(10, not diffs, f"{len(commands)} subcommand runs byte-identical on rerun; differing: {diffs}")
