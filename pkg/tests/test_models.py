import numpy as np
import pytest
from scipy.optimize import linprog

from acagame.instances import desk_instance, random_tiny
from acagame.models import (OPTIMAL, build_gaming_mpec, build_ll, build_ml_no_gaming, check_budget,
                            realized_redispatch, redispatch, solve_gaming, solve_no_anticipation,
                            solve_no_gaming)
from acagame.milp import solve_lp


def _reference_baseline(env, cap, price, dt=1.0):
    """Cheapest fleet profile under cap and envelope, posed directly on the per-step powers."""
    T = len(price)
    ub = np.minimum(cap, env.p_max)
    L = np.tril(np.ones((T, T))) * dt
    res = linprog(price * dt, A_ub=np.vstack([L, -L]), b_ub=np.concatenate([env.cum_fast, -env.cum_slow]),
                  bounds=list(zip(np.zeros(T), ub)), method="highs")
    return res


@pytest.mark.parametrize("seed", range(6))
def test_no_gaming_baseline_matches_reference(seed):
    inst = random_tiny(seed)
    cfg, scen = inst.cfg, inst.scen
    F, T = len(cfg.fsp_nodes), scen.horizon
    z = np.zeros((F, T))
    z[:, : min(cfg.b_aca, T)] = 1.0
    res = solve_no_gaming(inst.envs, cfg, z, scen)
    total = 0.0
    for f, n in enumerate(cfg.fsp_nodes):
        cap = np.where(z[f] > 0, cfg.p_aca[f], cfg.p_firm[f])
        ref = _reference_baseline(inst.envs[n], cap, scen.da_price)
        if ref.status != 0:
            assert res.status != OPTIMAL
            return
        total += ref.fun
        assert np.all(res.baseline[f] <= cap + 1e-9)
    assert res.status == OPTIMAL
    assert res.f_ml == pytest.approx(total, rel=1e-9, abs=1e-9)


def test_budget_checked():
    inst = random_tiny(0)
    cfg = inst.cfg.with_(b_aca=1)
    z = np.ones((len(cfg.fsp_nodes), inst.scen.horizon))
    with pytest.raises(ValueError):
        build_ml_no_gaming(inst.envs, cfg, z, inst.scen)
    with pytest.raises(ValueError):
        check_budget(z * 0.5, cfg)


def test_secure_baseline_needs_no_redispatch():
    inst = desk_instance(0, horizon=6, tightness=10.0)
    z = np.zeros((2, 6))
    base = solve_no_gaming(inst.envs, inst.cfg, z, inst.scen)
    plan = redispatch(inst.net, inst.envs, inst.cfg, z, base.baseline, inst.scen)
    assert plan.status == OPTIMAL
    # the FSP-favouring tie-break may move energy worth up to its 1e-9 tolerance
    assert plan.dso_cost == pytest.approx(0.0, abs=2e-9)
    assert plan.plan.shed_mwh == pytest.approx(0.0, abs=1e-9)
    assert plan.fsp_cost == pytest.approx(base.f_ml, rel=1e-7)


def test_redispatch_costs_are_consistent():
    inst = desk_instance(1, horizon=6)
    z = np.zeros((2, 6))
    base = solve_no_gaming(inst.envs, inst.cfg, z, inst.scen)
    plan = redispatch(inst.net, inst.envs, inst.cfg, z, base.baseline, inst.scen)
    e = plan.plan.e_rc
    assert np.all(e >= 0)
    assert plan.dso_cost == pytest.approx(float(np.sum(e * inst.scen.rc_spread[None, :])))
    assert plan.fsp_cost == pytest.approx(plan.da_cost - inst.cfg.pi_rc * e.sum())
    # the final dispatch never exceeds the baseline
    assert np.all(plan.plan.p_ev <= base.baseline + 1e-7)
    # the hard redispatch LP agrees with the soft one whenever nothing is shed
    if plan.plan.shed_mwh < 1e-9:
        hard = solve_lp(build_ll(inst.net, inst.envs, inst.cfg, z, base.baseline, inst.scen))
        assert hard.objective == pytest.approx(plan.dso_cost, rel=1e-7, abs=1e-7)


@pytest.mark.parametrize("seed", range(5))
def test_gaming_never_worse_for_fsp(seed):
    inst = desk_instance(seed, horizon=6)
    z = np.zeros((2, 6))
    gam = solve_gaming(inst.net, inst.envs, inst.cfg, z, inst.scen)
    ng = solve_no_gaming(inst.envs, inst.cfg, z, inst.scen)
    plan = redispatch(inst.net, inst.envs, inst.cfg, z, ng.baseline, inst.scen)
    assert gam.status == OPTIMAL
    assert gam.f_ml <= plan.fsp_cost + 1e-5 * max(1.0, abs(plan.fsp_cost))


def test_gaming_value_is_attained_by_its_baseline():
    inst = desk_instance(2, horizon=6)
    z = np.zeros((2, 6))
    gam = solve_gaming(inst.net, inst.envs, inst.cfg, z, inst.scen)
    real = realized_redispatch(inst.net, inst.envs, inst.cfg, z, gam.baseline, inst.scen)
    assert real.fsp_cost == pytest.approx(gam.f_ml, rel=1e-7)
    assert real.dso_cost == pytest.approx(gam.f_ul, rel=1e-7, abs=1e-7)


def test_no_anticipation_respects_budget():
    inst = desk_instance(3, horizon=6)
    for b in (0, 1, 2):
        status, z, obj = solve_no_anticipation(inst.net, inst.envs, inst.cfg.with_(b_aca=b), inst.scen)
        assert status == OPTIMAL
        assert np.all(z.sum(axis=1) <= b)
        assert obj >= -1e-9


def test_mpec_fixed_budget_rows_present():
    inst = desk_instance(0, horizon=6)
    m = build_gaming_mpec(inst.net, inst.envs, inst.cfg, None, inst.scen)
    assert m.z.shape == (2, 6)
    assert len(m.problem.family("budget")) == 2
