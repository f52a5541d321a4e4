"""Branch-and-bound for the DSO's ACA activations against a gaming FSP.

The middle/lower pair is the gaming MPEC, a MILP in the FSP's decisions, so
the remaining problem is a bilevel program with an integer leader and a
MILP follower.  Nodes carry partial activation plans.  A node is bounded by
the high-point relaxation (DSO cost over MPEC-feasible points, FSP
optimality dropped) tightened with the cut ``F_ML <= U``.  More activations
only shrink the FSP's baseline set, so the FSP value is monotone in the
plan and ``U`` is its largest value over the budget-maximal completions of
the node (every free activation on when there are too many completions).
Any feasible FSP point bounds that value from above, so ``U`` may come from
a loosely solved FSP problem.
"""

from __future__ import annotations

import heapq
import itertools
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .milp import INFEASIBLE, LE, OPTIMAL, GAP_LIMIT, solve_milp
from .models import (BaselineResult, GameConfig, Mpec, RedispatchPlan, active_steps,
                     build_gaming_mpec, fix_z, gaming_response, gaming_tiebreak, grid_values,
                     redispatch, solve_gaming)

log = logging.getLogger(__name__)

BRUTE_FORCE_GUARD = 10_000
ABS_TOL = 1e-9
PHI_GAP = 1e-3


class TrilevelError(RuntimeError):
    pass


def enumerate_candidates(n_fsp: int, n_t: int, b: int) -> int:
    """Candidate count n_fsp * n_t! / (n_t - b)! of the enumeration approach."""
    if b < 0 or n_t < 0 or n_fsp < 0:
        raise ValueError("counts must be nonnegative")
    if b > n_t:
        raise ValueError(f"budget {b} exceeds the horizon {n_t}")
    return n_fsp * math.perm(n_t, b)


def activation_plans(n_fsp: int, n_t: int, b: int):
    """All budget-feasible activation matrices, in lexicographic order of z."""
    per_node = []
    for _ in range(n_fsp):
        rows = []
        for bits in itertools.product((0, 1), repeat=n_t):
            if sum(bits) <= b:
                rows.append(bits)
        per_node.append(rows)
    for combo in itertools.product(*per_node):
        yield np.array(combo, dtype=float).reshape(n_fsp, n_t)


def count_plans(n_fsp: int, n_t: int, b: int) -> int:
    return sum(math.comb(n_t, k) for k in range(min(b, n_t) + 1)) ** n_fsp


@dataclass
class BnbNode:
    fixings: dict  # (fsp index, step) -> 0/1
    bound: float
    depth: int
    cuts: tuple = ()  # branching restrictions as (key, sense, value) on d*z

    def key(self) -> tuple:
        return tuple(sorted(self.fixings.items()))


@dataclass
class TrilevelSolution:
    status: str
    z_star: np.ndarray | None
    baseline_star: np.ndarray | None
    plan_star: RedispatchPlan | None
    f_ul: float
    f_ml: float
    f_ll: float
    nodes_explored: int
    bound: float = math.nan
    trace: list[str] = field(default_factory=list)


class PlanEvaluator:
    """Optimistic evaluation of activation plans, memoized by plan.

    Values do not depend on the ACA budget, so one evaluator may serve
    several budgets of the same instance and scenario.
    """

    def __init__(self, net, envs, cfg: GameConfig, scen, base: Mpec | None = None):
        if base is None:
            base = build_gaming_mpec(net, envs, cfg, None, scen)
        self.net, self.envs, self.cfg, self.scen, self.base = net, envs, cfg, scen, base
        self.cache: dict[bytes, BaselineResult] = {}
        self.first: dict[bytes, tuple] = {}  # plan -> (first-phase result, fixed MPEC)
        self.phi_cache: dict[bytes, float] = {}
        self.solves = 0

    def _first(self, z: np.ndarray, key: bytes):
        if key not in self.first:
            m = fix_z(self.base, z, budget=False)
            self.solves += 1
            self.first[key] = (gaming_response(m, self.cfg), m)
        return self.first[key]

    def evaluate(self, z: np.ndarray) -> BaselineResult:
        key = z.astype(np.int8).tobytes()
        if key not in self.cache:
            first, m = self._first(z, key)
            self.cache[key] = gaming_tiebreak(m, self.cfg, first)
        return self.cache[key]

    def response(self, z: np.ndarray) -> tuple[float, np.ndarray | None]:
        """FSP optimal value and one optimal baseline at ``z`` (inf, None if none exists)."""
        key = z.astype(np.int8).tobytes()
        first, m = self._first(z, key)
        if first.x is None:
            return math.inf, None
        return m.f_ml_value(first.x), np.maximum(grid_values(first.x, m.pda), 0.0)

    def phi_upper(self, z: np.ndarray) -> float:
        """Upper bound on the FSP optimal value at ``z`` ignoring the budget.

        Any feasible FSP point bounds the optimum from above, so the solve
        runs with a loose gap unless the plan was already evaluated exactly.
        +inf if the plan admits no baseline.
        """
        key = z.astype(np.int8).tobytes()
        if key in self.first:
            first, m = self.first[key]
            return m.f_ml_value(first.x) if first.x is not None else math.inf
        if key not in self.phi_cache:
            m = fix_z(self.base, z, budget=False)
            res = solve_milp(m.problem, PHI_GAP)
            self.solves += 1
            self.phi_cache[key] = m.f_ml_value(res.x) if res.x is not None else math.inf
        return self.phi_cache[key]


def _ok(res: BaselineResult) -> bool:
    return res.baseline is not None and math.isfinite(res.f_ul)


def _tol(value: float) -> float:
    return 1e-6 * (1.0 + abs(value))


def solve_trilevel(net, envs, cfg: GameConfig, scen, node_limit: int | None = None,
                   filter_nodes: bool = True, trace: bool = False, initial=(),
                   greedy: bool = True, evaluator: PlanEvaluator | None = None) -> TrilevelSolution:
    """DSO-optimal activations when the FSP games (optimistic semantics).

    ``filter_nodes`` toggles the redundancy/infeasibility filter on children
    and the budget propagation; the optimum does not depend on it.
    ``initial`` holds activation plans offered as incumbents before the
    search (plans over budget are ignored); ``greedy`` adds plans built by
    activating where the gaming response is redispatched most.
    ``evaluator`` shares plan evaluations with other calls on the same
    instance and scenario.
    """
    if not cfg.integral_linking():
        raise TrilevelError("p_aca - p_firm must be integer-valued for branching on linking rows")
    limit = cfg.node_limit if node_limit is None else int(node_limit)
    T = scen.horizon
    F = len(cfg.fsp_nodes)
    base = build_gaming_mpec(net, envs, cfg, None, scen)
    ev = evaluator if evaluator is not None else PlanEvaluator(net, envs, cfg, scen, base)
    lines: list[str] = []
    gap = cfg.rel_gap

    # activations without effect: no baseline column or a cap that never binds
    active = active_steps(envs, cfg, T)
    root_fix = {}
    for f, n in enumerate(cfg.fsp_nodes):
        for t in range(T):
            if not active[f, t] or envs[n].p_max[t] <= cfg.p_aca[f]:
                root_fix[(f, t)] = 0

    best_z, best = None, None
    inc = math.inf

    def offer(z: np.ndarray) -> None:
        nonlocal best_z, best, inc
        res = ev.evaluate(z)
        if not _ok(res):
            return
        better = best is None or res.f_ul < inc - _tol(inc) * 1e-3
        tie = (not better and best_z is not None and abs(res.f_ul - inc) <= _tol(inc) * 1e-3
               and tuple(z.ravel()) < tuple(best_z.ravel()))
        if better or tie:
            best_z, best, inc = z.copy(), res, res.f_ul

    def z_of(fix: dict) -> np.ndarray:
        z = np.zeros((F, T))
        for (f, t), v in fix.items():
            z[f, t] = v
        return z

    def propagate(fix: dict) -> dict | None:
        ones = np.zeros(F, dtype=int)
        for (f, t), v in fix.items():
            ones[f] += v
        if np.any(ones > cfg.b_aca):
            return None
        if not filter_nodes:
            return fix
        fix = dict(fix)
        for f in range(F):
            if ones[f] == cfg.b_aca:
                for t in range(T):
                    fix.setdefault((f, t), 0)
        return fix

    def prunable(bound: float) -> bool:
        return bound >= inc - max(gap * abs(inc), ABS_TOL)

    offer(np.zeros((F, T)))
    if greedy:
        _greedy(ev, offer, cfg, scen, root_fix, F, T)
    for z0 in initial:
        z0 = np.asarray(z0, dtype=float)
        if z0.shape == (F, T) and np.all(z0.sum(axis=1) <= cfg.b_aca):
            offer(z0)
    root = propagate(dict(root_fix)) if filter_nodes else dict(root_fix)
    seq = itertools.count()
    heap = [(-math.inf, next(seq), BnbNode(root, -math.inf, 0))]
    seen = {BnbNode(root, 0, 0).key()}
    explored = 0
    status = OPTIMAL
    open_bound = math.inf
    while heap:
        bound, _, node = heapq.heappop(heap)
        if prunable(bound):
            lines.append(f"depth={node.depth} bound={bound:.6g} incumbent={inc:.6g} action=prune-bound")
            continue
        if explored >= limit:
            heapq.heappush(heap, (bound, next(seq), node))
            status = GAP_LIMIT
            break
        explored += 1
        fix = node.fixings
        ones = np.zeros(F, dtype=int)
        for (f, t), v in fix.items():
            ones[f] += v
        if np.any(ones > cfg.b_aca) or any(v not in (0, 1) for v in fix.values()):
            lines.append(f"depth={node.depth} bound=inf incumbent={inc:.6g} action=prune-infeasible")
            continue
        free = [(f, t) for f in range(F) for t in range(T) if (f, t) not in fix]
        if not free or all(ones[f] >= cfg.b_aca for f, _ in free):
            z = z_of(fix)
            offer(z)
            res = ev.evaluate(z)
            val = res.f_ul if _ok(res) else math.inf
            lines.append(f"depth={node.depth} bound={val:.6g} incumbent={inc:.6g} action=prune-bound")
            continue
        # node bound: high-point relaxation with the FSP value cut
        U = _value_bound(ev, z_of(fix), free, ones, cfg.b_aca, F)
        hpr = base.problem.copy()
        for f in range(F):
            for t in range(T):
                c = int(base.z[f, t])
                if (f, t) in fix:
                    hpr.fix(c, float(fix[(f, t)]))
        if math.isfinite(U):
            hpr.add_row(base.f_ml.items(), LE, U + _tol(U), "value_cut")
        hpr.set_objective(base.f_ul)
        res = solve_milp(hpr, gap)
        ev.solves += 1
        if res.x is None:
            lines.append(f"depth={node.depth} bound=inf incumbent={inc:.6g} action=prune-infeasible")
            continue
        nb = res.bound if math.isfinite(res.bound) else res.objective
        nb = max(nb, bound, 0.0)
        if prunable(nb):
            lines.append(f"depth={node.depth} bound={nb:.6g} incumbent={inc:.6g} action=prune-bound")
            continue
        zhat = np.round(res.x[base.z])
        phi_hat, p_star = ev.response(zhat)
        f_ml_hat = base.f_ml_value(res.x)
        if p_star is not None and f_ml_hat <= phi_hat + _tol(phi_hat) and res.status == OPTIMAL:
            # the relaxation point is bilevel feasible: its plan attains the node bound
            offer(zhat)
            lines.append(f"depth={node.depth} bound={nb:.6g} incumbent={inc:.6g} action=prune-bound")
            continue
        # branch on the free linking row whose follower value is furthest from its optimal response
        p_hat = grid_values(res.x, base.pda)
        if p_star is None:
            p_star = np.zeros((F, T))
        viol = np.abs(p_hat - p_star)
        f, t = max(free, key=lambda ft: (viol[ft], -ft[0], -ft[1]))
        lines.append(f"depth={node.depth} bound={nb:.6g} incumbent={inc:.6g} action=expand "
                     f"branch=z[{cfg.fsp_nodes[f]},{t}]")
        d = int(round(cfg.delta[f]))
        v = d * int(zhat[f, t])
        for sense, rhs in (("<=", v - 1), ("==", v), (">=", v + 1)):
            # d*z with z binary and d <= -1 takes the values 0 and d only
            allowed = [zv for zv in (0, 1) if (sense == "<=" and d * zv <= rhs)
                       or (sense == "==" and d * zv == rhs) or (sense == ">=" and d * zv >= rhs)]
            cut = ((f, t), sense, rhs)
            if not allowed:
                if filter_nodes:
                    lines.append(f"depth={node.depth + 1} bound=inf incumbent={inc:.6g} action=prune-infeasible")
                    continue
                child_fix = dict(fix)
                child_fix[(f, t)] = 2  # marks an empty interval; rejected when processed
                heapq.heappush(heap, (nb, next(seq), BnbNode(child_fix, nb, node.depth + 1,
                                                             node.cuts + (cut,))))
                continue
            child_fix = dict(fix)
            child_fix[(f, t)] = allowed[0]
            child = propagate(child_fix)
            if child is None:
                lines.append(f"depth={node.depth + 1} bound=inf incumbent={inc:.6g} action=prune-infeasible")
                continue
            cnode = BnbNode(child, nb, node.depth + 1, node.cuts + (cut,))
            if filter_nodes:
                k = cnode.key()
                if k in seen:
                    lines.append(f"depth={node.depth + 1} bound={nb:.6g} incumbent={inc:.6g} "
                                 "action=prune-redundant")
                    continue
                seen.add(k)
            heapq.heappush(heap, (nb, next(seq), cnode))
    if heap:
        open_bound = min(h[0] for h in heap)
    if status == GAP_LIMIT:
        final_bound = min(open_bound, inc)
    else:
        final_bound = inc if best is not None else math.inf
    if best is None:
        return TrilevelSolution(INFEASIBLE if status == OPTIMAL else status, None, None, None,
                                math.nan, math.nan, math.nan, explored, final_bound,
                                lines if trace else [])
    plan = redispatch(net, envs, cfg, best_z, best.baseline, scen).plan
    return TrilevelSolution(status, best_z, best.baseline, plan, best.f_ul, best.f_ml, best.f_ul,
                            explored, final_bound, lines if trace else [])


MAX_COMPLETIONS = 8


def _value_bound(ev: PlanEvaluator, z: np.ndarray, free, ones, b: int, F: int) -> float:
    """Upper bound on the FSP value over all plans of a node.

    The FSP value only grows with activations, so the largest value sits at
    a completion that uses the full remaining budget.  When there are few
    such completions each is bounded separately; otherwise all free steps
    are switched on at once.
    """
    per_node = []
    for f in range(F):
        steps = [t for g, t in free if g == f]
        r = min(b - int(ones[f]), len(steps))
        per_node.append((steps, r))
    count = 1
    for steps, r in per_node:
        count *= math.comb(len(steps), r)
    if count > MAX_COMPLETIONS:
        zbar = z.copy()
        for f, t in free:
            zbar[f, t] = 1.0
        return ev.phi_upper(zbar)
    best = -math.inf
    for combo in itertools.product(*[itertools.combinations(steps, r) for steps, r in per_node]):
        zc = z.copy()
        for f, chosen in enumerate(combo):
            zc[f, list(chosen)] = 1.0
        best = max(best, ev.phi_upper(zc))
    return best


def _greedy(ev: PlanEvaluator, offer, cfg: GameConfig, scen, fixed: dict, F: int, T: int) -> None:
    """Incumbents from repeatedly activating the costliest redispatched step."""
    z = np.zeros((F, T))
    for _ in range(F * cfg.b_aca):
        res = ev.evaluate(z)
        if not _ok(res) or res.e_rc is None:
            return
        cost = res.e_rc * scen.rc_spread[None, :]
        ones = z.sum(axis=1)
        cand = [(cost[f, t], -f, -t) for f in range(F) for t in range(T)
                if z[f, t] == 0 and (f, t) not in fixed and ones[f] < cfg.b_aca and cost[f, t] > ABS_TOL]
        if not cand:
            return
        _, f, t = max(cand)
        z = z.copy()
        z[-f, -t] = 1.0
        offer(z)


def brute_force_trilevel(net, envs, cfg: GameConfig, scen, z_candidates=None) -> TrilevelSolution:
    """Exhaustive optimum over the given (default: all budget-feasible) activation plans."""
    T = scen.horizon
    F = len(cfg.fsp_nodes)
    if z_candidates is None:
        if count_plans(F, T, cfg.b_aca) > BRUTE_FORCE_GUARD:
            raise TrilevelError(f"more than {BRUTE_FORCE_GUARD} activation plans to enumerate")
        z_candidates = activation_plans(F, T, cfg.b_aca)
    z_candidates = list(z_candidates)
    if len(z_candidates) > BRUTE_FORCE_GUARD:
        raise TrilevelError(f"more than {BRUTE_FORCE_GUARD} activation plans to enumerate")
    base = build_gaming_mpec(net, envs, cfg, None, scen)
    best_z, best = None, None
    for z in sorted(z_candidates, key=lambda a: tuple(np.asarray(a).ravel())):
        z = np.asarray(z, dtype=float)
        res = solve_gaming(net, envs, cfg, z, scen, mpec=fix_z(base, z))
        if not _ok(res):
            continue
        if best is None or res.f_ul < best.f_ul - _tol(best.f_ul) * 1e-3:
            best_z, best = z, res
    if best is None:
        return TrilevelSolution(INFEASIBLE, None, None, None, math.nan, math.nan, math.nan,
                                len(z_candidates))
    plan = redispatch(net, envs, cfg, best_z, best.baseline, scen).plan
    return TrilevelSolution(OPTIMAL, best_z, best.baseline, plan, best.f_ul, best.f_ml, best.f_ul,
                            len(z_candidates), best.f_ul)
