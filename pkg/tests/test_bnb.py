import numpy as np
import pytest

from acagame.bnb import (PlanEvaluator, TrilevelError, activation_plans, brute_force_trilevel, count_plans,
                         enumerate_candidates, solve_trilevel)
from acagame.instances import desk_instance, random_tiny
from acagame.milp import GAP_LIMIT, OPTIMAL


def _close(a, b, rel=1e-5):
    return abs(a - b) <= rel * max(1.0, abs(b))


def test_candidate_formula_small_cases():
    assert enumerate_candidates(1, 3, 0) == 1
    assert enumerate_candidates(1, 3, 2) == 6
    assert enumerate_candidates(3, 5, 1) == 15
    with pytest.raises(ValueError):
        enumerate_candidates(1, 2, 3)


@pytest.mark.parametrize("F,T,b", [(1, 4, 2), (2, 3, 1), (2, 4, 4)])
def test_plan_enumeration_counts(F, T, b):
    plans = list(activation_plans(F, T, b))
    assert len(plans) == count_plans(F, T, b)
    assert len({p.tobytes() for p in plans}) == len(plans)
    assert all(p.sum(axis=1).max() <= b for p in plans)


@pytest.mark.parametrize("seed", [0, 3, 7, 12, 21, 33, 40, 58])
def test_matches_enumeration(seed):
    inst = random_tiny(seed)
    a = solve_trilevel(inst.net, inst.envs, inst.cfg, inst.scen)
    b = brute_force_trilevel(inst.net, inst.envs, inst.cfg, inst.scen)
    assert a.status == b.status
    if b.status == OPTIMAL:
        assert _close(a.f_ul, b.f_ul)
        # the returned plan is budget feasible and attains the reported value
        assert np.all(a.z_star.sum(axis=1) <= inst.cfg.b_aca)


def test_heuristics_do_not_change_the_optimum():
    inst = desk_instance(0, horizon=6)
    plain = solve_trilevel(inst.net, inst.envs, inst.cfg, inst.scen, greedy=False)
    fast = solve_trilevel(inst.net, inst.envs, inst.cfg, inst.scen)
    assert plain.status == fast.status == OPTIMAL
    assert _close(plain.f_ul, fast.f_ul, 1e-7)


def test_shared_evaluator_across_budgets():
    inst = desk_instance(1, horizon=6)
    ev = PlanEvaluator(inst.net, inst.envs, inst.cfg, inst.scen)
    prev = None
    for b in (0, 1, 2):
        cfg = inst.cfg.with_(b_aca=b)
        shared = solve_trilevel(inst.net, inst.envs, cfg, inst.scen, evaluator=ev)
        alone = solve_trilevel(inst.net, inst.envs, cfg, inst.scen)
        assert _close(shared.f_ul, alone.f_ul, 1e-7)
        # a larger budget can always repeat the smaller budget's plan
        if prev is not None:
            assert shared.f_ul <= prev + 1e-5 * max(1.0, abs(prev))
        prev = shared.f_ul


def test_zero_budget_is_the_no_activation_plan():
    inst = desk_instance(2, horizon=6)
    sol = solve_trilevel(inst.net, inst.envs, inst.cfg.with_(b_aca=0), inst.scen)
    assert sol.status == OPTIMAL
    assert not sol.z_star.any()


def test_node_limit_keeps_best_plan():
    inst = desk_instance(0, horizon=6)
    full = solve_trilevel(inst.net, inst.envs, inst.cfg, inst.scen, greedy=False)
    if full.nodes_explored <= 1:
        pytest.skip("instance solved at the root")
    capped = solve_trilevel(inst.net, inst.envs, inst.cfg, inst.scen, node_limit=1, greedy=False)
    assert capped.status in (OPTIMAL, GAP_LIMIT)
    assert capped.z_star is not None
    assert capped.f_ul >= full.f_ul - 1e-5 * max(1.0, abs(full.f_ul))


def test_trace_lines():
    inst = desk_instance(0, horizon=6)
    sol = solve_trilevel(inst.net, inst.envs, inst.cfg, inst.scen, trace=True)
    assert sol.trace
    for line in sol.trace:
        assert line.startswith("depth=") and "bound=" in line and "action=" in line


def test_brute_force_guard():
    inst = desk_instance(0, horizon=24)
    with pytest.raises(TrilevelError):
        brute_force_trilevel(inst.net, inst.envs, inst.cfg, inst.scen)
