"""Independent reference computations used to check the solver stack.

Each oracle recomputes a quantity by a different route (exhaustive search,
per-vehicle LPs, closed forms); :func:`run_all` backs ``acagame verify``.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.optimize import linprog

from .bnb import brute_force_trilevel, count_plans, enumerate_candidates, solve_trilevel
from .ev_fleet import ChargingSession, aggregate_sessions, check_profile
from .kkt import build_kkt, duals_from_lp, verify_kkt
from .milp import ModelProblem, solve_lp, solve_milp
from .models import build_ll
from .network import polygon_coefficients
from .scenario import keyed_rng, stopping_check

CANDIDATE_TABLE = {0: 2, 1: 48, 2: 1104, 3: 24288, 4: 510048, 5: 10200960}


# -- fleets --------------------------------------------------------------------

def per_ev_feasible(sessions, profile, dt: float = 1.0, tol: float = 1e-6) -> bool:
    """Whether ``profile`` splits into feasible individual charging schedules.

    Feasibility LP over per-session powers: each session charges inside its
    window within its power limit and receives its energy by departure, and
    the sessions sum to the profile within ``tol`` per step.  Sessions that
    continue past the horizon may finish after it.
    """
    profile = np.asarray(profile, dtype=float)
    T = len(profile)
    sessions = list(sessions)
    cols = [(i, t) for i, s in enumerate(sessions) for t in range(s.arrival, s.departure)]
    if not cols:
        return bool(np.all(np.abs(profile) <= tol))
    n = len(cols)
    bounds = [(0.0, sessions[i].max_power) for i, _ in cols]
    a_eq = np.zeros((len(sessions), n))
    for j, (i, t) in enumerate(cols):
        a_eq[i, j] = dt
    b_eq = np.array([s.energy_need for s in sessions])
    # sum over sessions equals the profile inside the horizon (two-sided tolerance)
    a_ub = np.zeros((2 * T, n))
    b_ub = np.zeros(2 * T)
    for j, (i, t) in enumerate(cols):
        a_ub[t, j] = 1.0
        a_ub[T + t, j] = -1.0
    b_ub[:T] = profile + tol / dt
    b_ub[T:] = -(profile - tol / dt)
    res = linprog(np.zeros(n), A_ub=a_ub, b_ub=b_ub, A_eq=a_eq, b_eq=b_eq, bounds=bounds,
                  method="highs")
    return res.status == 0


def random_fleet(rng, max_evs: int = 4, max_steps: int = 8):
    T = int(rng.integers(2, max_steps + 1))
    sessions = []
    for _ in range(int(rng.integers(1, max_evs + 1))):
        a = int(rng.integers(0, T))
        d = int(rng.integers(a + 1, T + 1))
        pmax = float(rng.uniform(0.5, 2.0))
        e = float(rng.uniform(0.0, 1.0)) * pmax * (d - a)
        sessions.append(ChargingSession(a, d, e, pmax))
    return T, sessions


def random_profiles(rng, sessions, T: int, count: int) -> list[np.ndarray]:
    """Half inside the aggregate envelope (by construction), half from disaggregated schedules."""
    env = aggregate_sessions(sessions, T)
    out = []
    for k in range(count):
        if k % 2 == 0:
            # walk between the slow and fast cumulative bounds under the power limit
            cum, prof = 0.0, np.zeros(T)
            for t in range(T):
                lo = max(env.cum_slow[t] - cum, 0.0)
                hi = min(env.cum_fast[t] - cum, env.p_max[t])
                p = lo if hi <= lo else float(rng.uniform(lo, hi))
                if rng.random() < 0.3:
                    p = lo if rng.random() < 0.5 else max(hi, lo)
                prof[t] = p
                cum += p
            out.append(prof)
        else:
            prof = np.zeros(T)
            for s in sessions:
                w = rng.dirichlet(np.ones(s.departure - s.arrival))
                p = np.minimum(w * s.energy_need, s.max_power)
                left = s.energy_need - p.sum()
                for i in range(len(p)):
                    add = min(s.max_power - p[i], left)
                    p[i] += add
                    left -= add
                prof[s.arrival:s.departure] += p
            out.append(prof)
    return out


def envelope_agreement(seed: int = 0, fleets: int = 100, profiles: int = 100, tol: float = 1e-6):
    """Counts of (false accepts, false rejects) of the envelope against per-EV feasibility."""
    rng = keyed_rng(seed, 21, 0)
    fa = fr = 0
    for _ in range(fleets):
        T, sessions = random_fleet(rng)
        env = aggregate_sessions(sessions, T)
        for prof in random_profiles(rng, sessions, T, profiles):
            agg = check_profile(prof, env, tol=tol)
            exact = per_ev_feasible(sessions, prof, tol=tol)
            fa += agg and not exact
            fr += exact and not agg
    return fa, fr


# -- polygon -------------------------------------------------------------------

def polygon_check(K: int, points: int = 10_000, seed: int = 0) -> tuple[int, float]:
    """(violations among accepted random points, worst vertex distance from the circle)."""
    cuts = polygon_coefficients(K)
    rng = keyed_rng(seed, 22, K)
    accepted = violations = 0
    while accepted < points:
        P, Q = rng.uniform(-1.1, 1.1, (2, 4 * points))
        inside = np.ones(P.shape, dtype=bool)
        for c in cuts:
            rhs = c.a * P + c.b
            inside &= (Q <= rhs) if c.sense == "upper" else (Q >= rhs)
        P, Q = P[inside][: points - accepted], Q[inside][: points - accepted]
        accepted += len(P)
        violations += int(np.sum(P ** 2 + Q ** 2 > 1.0 + 1e-12))
    worst = 0.0
    for k in range(K):
        c0, c1 = cuts[k - 1], cuts[k]
        # vertex shared by consecutive chords: a0 P + b0 = a1 P + b1
        P = (c1.b - c0.b) / (c0.a - c1.a)
        Q = c1.a * P + c1.b
        worst = max(worst, abs(math.hypot(P, Q) - 1.0))
    return violations, worst


# -- KKT -----------------------------------------------------------------------

def random_ll(seed: int):
    """A redispatch LP with random activations and a baseline near the connection caps.

    Returns None when the draw leaves the network unsecurable.
    """
    from .instances import random_tiny
    inst = random_tiny(seed)
    rng = keyed_rng(seed, 23, 0)
    F, T = len(inst.cfg.fsp_nodes), inst.scen.horizon
    z = np.zeros((F, T))
    for f in range(F):
        steps = rng.permutation(T)[: inst.cfg.b_aca]
        z[f, steps] = 1.0
    cap = np.array([[inst.cfg.p_aca[f] if z[f, t] else inst.cfg.p_firm[f] for t in range(T)]
                    for f in range(F)])
    p_max = np.array([inst.envs[n].p_max for n in inst.cfg.fsp_nodes])
    baseline = np.minimum(cap, p_max) * rng.uniform(0.5, 1.0, cap.shape)
    ll = build_ll(inst.net, inst.envs, inst.cfg, z, baseline, inst.scen)
    return ll if solve_lp(ll).ok else None


def random_lls(count: int, start: int = 0) -> list[ModelProblem]:
    out, seed = [], start
    while len(out) < count:
        ll = random_ll(seed)
        seed += 1
        if ll is not None:
            out.append(ll)
    return out


def kkt_check(ll: ModelProblem, big_M: float = 1e4) -> tuple[float, float, float]:
    """(worst KKT residual at the LP duals, LP optimum, optimum over the KKT set)."""
    res = solve_lp(ll)
    duals = duals_from_lp(ll, res)
    report = verify_kkt(res.x, duals, ll)
    target = ModelProblem("kkt_oracle")
    for j, name in enumerate(ll.names):
        if ll.param[j]:
            target.add_var(name, ll.lb[j], ub=ll.ub[j])
    system = build_kkt(ll, target, big_M)
    target.set_objective({int(system.var_map[j]): c for j, c in ll.objective.items()
                          if not ll.param[j]})
    kres = solve_milp(target, 1e-9)
    kval = kres.objective if kres.x is not None else math.nan
    # constant part of the LL objective from param columns
    const = sum(c * ll.lb[j] for j, c in ll.objective.items() if ll.param[j])
    return report.worst(), res.objective, kval + const


# -- suite -------------------------------------------------------------------

def run_all(quick: bool = False):
    """Yield (name, passed, detail) per check."""
    got = {b: enumerate_candidates(2, 24, b) for b in CANDIDATE_TABLE}
    yield "candidate counts", got == CANDIDATE_TABLE, str(list(got.values()))

    for K in (4, 8, 16):
        v, w = polygon_check(K, 2000 if quick else 10_000)
        yield f"polygon K={K}", v == 0 and w < 1e-9, f"violations={v} vertex_err={w:.1e}"

    flips = [n for n in range(1500, 1600) if stopping_check(_unit_stream(n)) == "stop"]
    yield "stopping threshold", bool(flips) and flips[0] == 1537, f"first stop at N={flips[0] if flips else None}"

    worst_res, worst_gap = 0.0, 0.0
    for ll in random_lls(5 if quick else 20):
        r, lp, kv = kkt_check(ll)
        worst_res = max(worst_res, r)
        worst_gap = max(worst_gap, abs(kv - lp) / max(1.0, abs(lp)))
    yield "KKT fidelity", worst_res < 1e-6 and worst_gap < 1e-6, \
        f"residual={worst_res:.1e} rel_gap={worst_gap:.1e}"

    from .instances import random_tiny
    bad = done = 0
    seed = 0
    while done < (5 if quick else 50):
        inst = random_tiny(seed)
        seed += 1
        if count_plans(len(inst.cfg.fsp_nodes), inst.scen.horizon, inst.cfg.b_aca) > 200:
            continue
        a = solve_trilevel(inst.net, inst.envs, inst.cfg, inst.scen)
        b = brute_force_trilevel(inst.net, inst.envs, inst.cfg, inst.scen)
        bad += not (abs(a.f_ul - b.f_ul) <= 1e-5 * max(1.0, abs(b.f_ul)))
        done += 1
    yield "trilevel vs enumeration", bad == 0, f"{done - bad}/{done} instances agree"

    fa, fr = envelope_agreement(fleets=10 if quick else 100, profiles=20 if quick else 100)
    yield "envelope vs per-EV LP", fa == 0 and fr == 0, f"false_accepts={fa} false_rejects={fr}"


def _unit_stream(n: int) -> np.ndarray:
    # any nondegenerate sample works: the rule only depends on n once s > 0
    x = np.zeros(n)
    x[0] = 1.0
    return x
