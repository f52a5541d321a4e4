"""Acceptance suite: one printed PASS/FAIL line per criterion.

The two-FSP desk batch (criteria 7 and 9) solves 100 paired scenarios with
24 steps for budgets 0..3 and takes a long time on one core.
"""

from __future__ import annotations

import numpy as np
import pytest
from click.testing import CliRunner

from acagame.bnb import brute_force_trilevel, count_plans, enumerate_candidates, solve_trilevel
from acagame.cli import main
from acagame.instances import random_tiny
from acagame.oracles import envelope_agreement, kkt_check, polygon_check, random_lls
from acagame.scenario import stopping_check

from _desk import BUDGETS, desk_batch

REL = 1e-5
BATCH = 100


def report(capsys, number: int, passed: bool, detail: str) -> None:
    with capsys.disabled():
        print(f"\nACCEPTANCE #{number} {'PASS' if passed else 'FAIL'}: {detail}")


def _leq(a: float, b: float, rel: float = REL) -> bool:
    return a <= b + rel * max(1.0, abs(b))


def test_1_candidate_counts(capsys):
    expected = [2, 48, 1104, 24288, 510048, 10200960]
    got = [enumerate_candidates(2, 24, b) for b in range(6)]
    report(capsys, 1, got == expected, f"counts for B=0..5: {got}")
    assert got == expected


def test_2_trilevel_matches_enumeration(capsys):
    done, bad, seed, nonzero = 0, [], 0, 0
    while done < 50:
        inst = random_tiny(seed)
        seed += 1
        if count_plans(len(inst.cfg.fsp_nodes), inst.scen.horizon, inst.cfg.b_aca) > 200:
            continue
        a = solve_trilevel(inst.net, inst.envs, inst.cfg, inst.scen)
        b = brute_force_trilevel(inst.net, inst.envs, inst.cfg, inst.scen)
        same = a.status == b.status and (
            b.status != "optimal" or abs(a.f_ul - b.f_ul) <= REL * max(1.0, abs(b.f_ul)))
        if not same:
            bad.append(inst.scen.id)
        nonzero += b.status == "optimal" and b.f_ul > 1e-9
        done += 1
    ok = not bad
    report(capsys, 2, ok, f"{done - len(bad)}/{done} instances agree ({nonzero} with nonzero "
                          f"redispatch cost); mismatches: {bad}")
    assert ok


def test_3_kkt_fidelity(capsys):
    worst_res = worst_gap = 0.0
    lls = random_lls(20)
    for ll in lls:
        r, lp, kv = kkt_check(ll)
        worst_res = max(worst_res, r)
        worst_gap = max(worst_gap, abs(kv - lp) / max(1.0, abs(lp)))
    ok = len(lls) >= 20 and worst_res < 1e-6 and worst_gap < 1e-6
    report(capsys, 3, ok, f"{len(lls)} lower levels, worst residual {worst_res:.1e}, "
                          f"worst relative gap {worst_gap:.1e}")
    assert ok


def test_4_polygon(capsys):
    details, ok = [], True
    for K in (4, 8, 16):
        v, w = polygon_check(K, 10_000)
        ok &= v == 0 and w < 1e-9
        details.append(f"K={K}: {v} violations, vertex error {w:.1e}")
    report(capsys, 4, ok, "; ".join(details))
    assert ok


def test_5_envelope_vs_per_ev(capsys):
    fa, fr = envelope_agreement(seed=0, fleets=100, profiles=100)
    ok = fa == 0 and fr == 0
    report(capsys, 5, ok, f"100 fleets x 100 profiles: {fa} false accepts, {fr} false rejects")
    assert ok


def test_6_stopping_threshold(capsys):
    def stream(n):
        x = np.zeros(n)
        x[0] = 1.0
        return x

    before, at = stopping_check(stream(1536)), stopping_check(stream(1537))
    ok = before == "continue" and at == "stop"
    report(capsys, 6, ok, f"N=1536 -> {before}, N=1537 -> {at}")
    assert ok


@pytest.fixture(scope="module")
def batch():
    return desk_batch(BATCH)


def test_7_dominance(capsys, batch):
    gaming, antic, budget = [], [], []
    for r in batch:
        if not _leq(r.f_ml_gaming, r.f_ml_no_gaming):
            gaming.append(r.index)
        for b in BUDGETS:
            a, n = r.f_ul_anticipation[b], r.f_ul_no_anticipation[b]
            if not (_leq(a, n) and _leq(n, r.f_ul_none)):
                antic.append((r.index, b))
        vals = [r.f_ul_anticipation[b] for b in BUDGETS]
        if any(not _leq(hi, lo) for lo, hi in zip(vals, vals[1:])):
            budget.append(r.index)
    limited = sum(any(r.gap_limited.values()) for r in batch)
    ok = len(batch) >= 100 and not (gaming or antic or budget)
    report(capsys, 7, ok, f"{len(batch)} scenarios; F_ML gaming > no_gaming: {gaming}; "
                          f"F_UL chain broken (scenario, budget): {antic}; "
                          f"F_UL increasing in budget: {budget}; gap-limited searches: {limited}")
    assert ok


def test_8_determinism(capsys, tmp_path):
    cfg = tmp_path / "c.toml"
    body = """
seed = 5
horizon = 6
[paths]
output = "{out}"
[game]
p_firm = [8.0, 4.0]
p_aca = [1.0, 1.0]
b_aca = 1
[fleet]
sizes = [3000, 1500]
arrival_mean = 1.0
stay_mean = 4.0
[prices]
base_da = [50.0, 45.0, 43.0, 60.0, 70.0, 55.0]
[uncertainty]
sigma = 0.05
n_max = 4
[run]
batch_size = 2
pairs = ["none/no_gaming", "none/gaming", "no_anticipation/gaming", "anticipation/gaming"]
"""
    files = []
    for name, jobs in (("seq1", 1), ("seq2", 1), ("par", 2)):
        cfg.write_text(body.format(out=name))
        r = CliRunner().invoke(main, ["run", "--config", str(cfg), "--jobs", str(jobs)],
                               catch_exceptions=False)
        assert r.exit_code in (0, 1), r.output
        d = tmp_path / name
        files.append({p: (d / p).read_bytes() for p in ("results.csv", "summary.json")})
    repeat, parallel = files[0] == files[1], files[0] == files[2]
    ok = repeat and parallel
    report(capsys, 8, ok, f"repeated run byte-identical: {repeat}; jobs=2 equals jobs=1: {parallel}")
    assert ok


def test_9_anticipation_search_size(capsys, batch):
    nodes = [r.nodes[3] for r in batch]
    med = float(np.median(nodes))
    ok = len(batch) >= 100 and med < 243
    report(capsys, 9, ok, f"B=3 over {len(batch)} scenarios: median {med:g} nodes, "
                          f"max {max(nodes)}, limit 243")
    assert ok
