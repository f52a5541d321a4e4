"""The five decision problems of the redispatch game as ModelProblems.

Naming of columns: ``pda[n,t]`` baseline (MW), ``z[n,t]`` ACA activation,
``erc[n,t]`` redispatched energy (MWh), ``pev[n,t]`` final fleet dispatch
(MW); network variables are per unit on the network base.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import kkt as kkt_mod
from .ev_fleet import FleetEnvelope
from .milp import (EQ, GE, INFEASIBLE, LE, OPTIMAL, ModelError, ModelProblem, SolveResult,
                   solve_lp, solve_milp)
from .network import FlowVars, NetworkModel, add_flow_vars, emit_lindistflow, polygon_coefficients
from .scenario import Scenario

log = logging.getLogger(__name__)


class InfeasibleModel(RuntimeError):
    def __init__(self, stage: str, status: str):
        super().__init__(f"{stage}: solver status {status}")
        self.stage = stage
        self.status = status


@dataclass(frozen=True)
class GameConfig:
    fsp_nodes: tuple[int, ...]
    p_firm: tuple[float, ...]  # MW per FSP node
    p_aca: tuple[float, ...]  # MW per FSP node
    pi_rc: float = 100.0
    b_aca: int = 3
    dt: float = 1.0
    big_M: float = kkt_mod.DEFAULT_BIG_M
    K: int = 8
    lambda_ev: float = 0.0
    rel_gap: float = 1e-5
    node_limit: int = 100_000
    shed_penalty: float = 1e6

    def __post_init__(self):
        if not (len(self.fsp_nodes) == len(self.p_firm) == len(self.p_aca)):
            raise ValueError("fsp_nodes, p_firm and p_aca must have equal length")
        for firm, aca in zip(self.p_firm, self.p_aca):
            if not 0 <= aca < firm:
                raise ValueError(f"need 0 <= p_aca < p_firm, got {aca}, {firm}")
        if self.b_aca < 0:
            raise ValueError("ACA budget must be nonnegative")
        if self.dt <= 0:
            raise ValueError("dt must be positive")

    @property
    def delta(self) -> np.ndarray:
        return np.asarray(self.p_aca) - np.asarray(self.p_firm)

    def integral_linking(self) -> bool:
        d = self.delta
        return bool(np.all(np.abs(d - np.round(d)) < 1e-9))

    def with_(self, **changes) -> "GameConfig":
        from dataclasses import replace
        return replace(self, **changes)


def _name(base: str, n: int, t: int) -> str:
    return f"{base}[{n},{t}]"


def active_steps(envs: dict[int, FleetEnvelope], cfg: GameConfig, T: int) -> np.ndarray:
    """(fsp, step) mask of steps where a fleet can draw power at all."""
    return np.array([[envs[n].p_max[t] > 0 for t in range(T)] for n in cfg.fsp_nodes], dtype=bool)


def _grid(problem: ModelProblem, cfg: GameConfig, base: str, T: int) -> np.ndarray:
    """Column grid (fsp, step); -1 where the column does not exist."""
    return np.array([[problem.var(_name(base, n, t)) if problem.has_var(_name(base, n, t)) else -1
                      for t in range(T)] for n in cfg.fsp_nodes], dtype=np.int64).reshape(len(cfg.fsp_nodes), T)


def grid_values(x: np.ndarray, grid: np.ndarray) -> np.ndarray:
    """Values on a column grid; absent columns read as 0."""
    return np.where(grid >= 0, np.asarray(x)[np.maximum(grid, 0)], 0.0)


def _cum_rows(p: ModelProblem, cols: list[int], t: int, env: FleetEnvelope, dt: float,
              n: int) -> None:
    terms = [(c, dt) for c in cols if c >= 0]
    lo, hi = float(env.cum_slow[t]), float(env.cum_fast[t])
    if not terms:
        # nothing can move here; keep an empty row only when it is violated
        if lo > 1e-9:
            p.add_row([], GE, lo, "soc_lo", (n, t))
        return
    p.add_row(terms, GE, lo, "soc_lo", (n, t))
    p.add_row(terms, LE, hi, "soc_up", (n, t))


def _fleet_rows(p: ModelProblem, cfg: GameConfig, f: int, env: FleetEnvelope, cols: np.ndarray,
                zcols: np.ndarray, T: int) -> None:
    """ACA cap, power limit and energy envelope on the columns of one fleet."""
    n = cfg.fsp_nodes[f]
    for t in range(T):
        if cols[t] < 0:
            continue
        p.add_row([(int(cols[t]), 1.0)], GE, 0.0, "aca_lo", (n, t))
        p.add_row([(int(cols[t]), 1.0), (int(zcols[t]), -cfg.delta[f])], LE, cfg.p_firm[f], "aca_up", (n, t))
    for t in range(T):
        if cols[t] < 0:
            continue
        p.add_row([(int(cols[t]), 1.0)], GE, 0.0, "pmax_lo", (n, t))
        p.add_row([(int(cols[t]), 1.0)], LE, float(env.p_max[t]), "pmax_up", (n, t))
    for t in range(T):
        _cum_rows(p, [int(c) for c in cols[:t + 1]], t, env, cfg.dt, n)


def _add_params(p: ModelProblem, envs, cfg: GameConfig, active: np.ndarray, with_pda: bool) -> None:
    T = active.shape[1]
    if with_pda:
        for f, n in enumerate(cfg.fsp_nodes):
            for t in range(T):
                if active[f, t]:
                    cap = min(cfg.p_firm[f], float(envs[n].p_max[t]))
                    p.add_var(_name("pda", n, t), 0.0, cap, param=True)
    for f, n in enumerate(cfg.fsp_nodes):
        for t in range(T):
            if active[f, t]:
                p.add_var(_name("z", n, t), 0.0, 1.0, param=True)


# -- templates -------------------------------------------------------------------

def ml_template(envs: dict[int, FleetEnvelope], cfg: GameConfig, scen: Scenario,
                with_objective: bool = True) -> ModelProblem:
    """Baseline LP: ACA caps, fleet power limits and energy envelope.

    ``z`` enters as param columns bounded to [0, 1].  Steps where a fleet
    has no power available carry no baseline column (the baseline is 0).
    """
    T = scen.horizon
    active = active_steps(envs, cfg, T)
    p = ModelProblem("ml")
    for f, n in enumerate(cfg.fsp_nodes):
        for t in range(T):
            if active[f, t]:
                p.add_var(_name("pda", n, t), -math.inf, math.inf)
    _add_params(p, envs, cfg, active, with_pda=False)
    pda = _grid(p, cfg, "pda", T)
    zz = _grid(p, cfg, "z", T)
    for f, n in enumerate(cfg.fsp_nodes):
        _fleet_rows(p, cfg, f, envs[n], pda[f], zz[f], T)
    if with_objective:
        p.set_objective({int(pda[f, t]): scen.da_price[t] * cfg.dt
                         for f in range(len(cfg.fsp_nodes)) for t in range(T) if pda[f, t] >= 0})
    return p


# Rows of the redispatch LP implied by pev <= pda (rc_nonneg with the redispatch
# balance) once pda itself obeys the baseline constraints; pmax_lo duplicates aca_lo.
IMPLIED_BY_BASELINE = ("aca_up", "pmax_up", "soc_up", "pmax_lo")


def ll_template(net: NetworkModel, envs: dict[int, FleetEnvelope], cfg: GameConfig,
                scen: Scenario, soft: bool = False, embedded: bool = False) -> ModelProblem:
    """Redispatch LP with ``pda``/``z`` as param columns.

    With ``soft`` every polygon radius may grow by a penalized per-unit
    amount ``shed[b,t]``.  ``embedded`` leaves out the rows listed in
    ``IMPLIED_BY_BASELINE``; only valid where the baseline constraints are
    enforced on ``pda`` alongside.
    """
    T = scen.horizon
    if scen.inflexible.shape != (len(net.buses), T):
        raise ModelError(f"scenario loads {scen.inflexible.shape} do not match network")
    active = active_steps(envs, cfg, T)
    p = ModelProblem("ll")
    inf = math.inf
    dt, base = cfg.dt, net.base_mva
    fsp = {n: f for f, n in enumerate(cfg.fsp_nodes)}
    for base_name in ("erc", "pev"):
        for f, n in enumerate(cfg.fsp_nodes):
            for t in range(T):
                if active[f, t]:
                    p.add_var(_name(base_name, n, t), -inf, inf)
    pcol = np.full((len(net.buses), T), -1, dtype=np.int64)
    qcol = np.full((len(net.buses), T), -1, dtype=np.int64)
    for i, bus in enumerate(net.buses):
        if bus.is_slack:
            continue
        for t in range(T):
            pcol[i, t] = p.add_var(_name("p", bus.id, t), -inf, inf)
            qcol[i, t] = p.add_var(_name("q", bus.id, t), -inf, inf)
    flows = add_flow_vars(p, net, T)
    shed = None
    if soft:
        shed = np.array([[p.add_var(f"shed[{br.frm}-{br.to},{t}]", 0.0, inf) for t in range(T)]
                         for br in net.branches], dtype=np.int64).reshape(len(net.branches), T)
    _add_params(p, envs, cfg, active, with_pda=True)

    erc = _grid(p, cfg, "erc", T)
    pev = _grid(p, cfg, "pev", T)
    pda = _grid(p, cfg, "pda", T)
    zz = _grid(p, cfg, "z", T)
    for f, n in enumerate(cfg.fsp_nodes):
        for t in range(T):
            if active[f, t]:
                p.add_row([(int(erc[f, t]), 1.0)], GE, 0.0, "rc_nonneg", (n, t))
        for t in range(T):
            if active[f, t]:
                p.add_row([(int(pev[f, t]), dt), (int(pda[f, t]), -dt), (int(erc[f, t]), 1.0)], EQ, 0.0,
                          "redispatch", (n, t))
    for i, bus in enumerate(net.buses):
        if bus.is_slack:
            continue
        f = fsp.get(bus.id)
        for t in range(T):
            p_if = float(scen.inflexible[i, t])
            terms = [(int(pcol[i, t]), 1.0)]
            if f is not None and pev[f, t] >= 0:
                terms.append((int(pev[f, t]), -1.0 / base))
            p.add_row(terms, EQ, p_if / base, "p_inj", (bus.id, t))
        for t in range(T):
            p_if = float(scen.inflexible[i, t])
            terms = [(int(qcol[i, t]), 1.0)]
            if f is not None and pev[f, t] >= 0 and cfg.lambda_ev:
                terms.append((int(pev[f, t]), -cfg.lambda_ev / base))
            p.add_row(terms, EQ, bus.reactive_factor * p_if / base, "q_inj", (bus.id, t))
    emit_lindistflow(p, net, pcol, qcol, flows, polygon_coefficients(cfg.K), cut_relax=shed)
    for f, n in enumerate(cfg.fsp_nodes):
        _fleet_rows(p, cfg, f, envs[n], pev[f], zz[f], T)
    obj = {int(erc[f, t]): float(scen.rc_spread[t])
           for f in range(len(cfg.fsp_nodes)) for t in range(T) if erc[f, t] >= 0}
    if soft:
        for c in shed.ravel():
            obj[int(c)] = cfg.shed_penalty * base * dt
    p.set_objective(obj)
    if embedded:
        p = p.restrict([i for i, r in enumerate(p.rows) if r.family not in IMPLIED_BY_BASELINE])
    return p


def _fix_params(p: ModelProblem, cfg: GameConfig, T: int, z=None, baseline=None) -> None:
    z = np.zeros((len(cfg.fsp_nodes), T)) if z is None else np.asarray(z, dtype=float)
    for f, n in enumerate(cfg.fsp_nodes):
        for t in range(T):
            if p.has_var(_name("z", n, t)):
                p.fix(p.var(_name("z", n, t)), z[f, t])
            if baseline is not None and p.has_var(_name("pda", n, t)) and p.param[p.var(_name("pda", n, t))]:
                p.fix(p.var(_name("pda", n, t)), baseline[f, t])


def check_budget(z, cfg: GameConfig) -> None:
    z = np.asarray(z)
    if np.any((z != 0) & (z != 1)):
        raise ValueError("ACA activations must be binary")
    if np.any(z.sum(axis=1) > cfg.b_aca):
        raise ValueError(f"ACA activation exceeds the daily budget {cfg.b_aca}")


# -- public builders -------------------------------------------------------------

def build_ll(net, envs, cfg: GameConfig, z, baseline, scen: Scenario, soft: bool = False) -> ModelProblem:
    p = ll_template(net, envs, cfg, scen, soft=soft)
    _fix_params(p, cfg, scen.horizon, z, np.asarray(baseline, dtype=float))
    return p


def build_ml_no_gaming(envs, cfg: GameConfig, z, scen: Scenario) -> ModelProblem:
    check_budget(z, cfg)
    p = ml_template(envs, cfg, scen)
    _fix_params(p, cfg, scen.horizon, z)
    return p


def embed_primal(src: ModelProblem, target: ModelProblem, prefix: str = "") -> np.ndarray:
    """Copy columns and rows of ``src`` into ``target``; params resolve by name."""
    col = np.empty(src.n_vars, dtype=np.int64)
    for j, name in enumerate(src.names):
        if src.param[j]:
            col[j] = target.var(name)
        else:
            col[j] = target.add_var(prefix + name, src.lb[j], src.ub[j], src.integer[j])
    for row in src.rows:
        target.add_row(zip(col[row.cols].tolist(), row.vals.tolist()), row.sense, row.rhs,
                       prefix + row.family, row.key)
    return col


LL_DROPPABLE = ("cut_up", "cut_lo", "v_lo", "v_up", "aca_up")


def _map_grid(col: np.ndarray, grid: np.ndarray) -> np.ndarray:
    return np.where(grid >= 0, col[np.maximum(grid, 0)], -1)


def _reduced(problem: ModelProblem, droppable, presolve: bool) -> tuple[ModelProblem, bool]:
    if not presolve:
        return problem, True
    pre = kkt_mod.presolve_lower_level(problem, droppable)
    log.debug("presolve %s: %d static rows, %d implied rows removed", problem.name,
              pre.dropped_static, pre.dropped_redundant)
    return pre.problem, pre.feasible


def _mark_infeasible(target: ModelProblem, why: str) -> None:
    target.add_row([], GE, 1.0, "infeasible", (why,))


@dataclass
class Mpec:
    """A gaming MPEC (FSP baseline with the redispatch LP replaced by its KKT)."""
    problem: ModelProblem
    kkt: kkt_mod.KktSystem
    ll: ModelProblem
    z: np.ndarray  # (fsp, step) columns
    pda: np.ndarray  # -1 where the fleet is idle
    erc: np.ndarray
    pev: np.ndarray
    f_ml: dict[int, float]
    f_ul: dict[int, float]
    linking: dict[tuple[int, int], list[int]] = field(default_factory=dict)

    def f_ml_value(self, x) -> float:
        return float(sum(c * x[j] for j, c in self.f_ml.items()))

    def f_ul_value(self, x) -> float:
        return float(sum(c * x[j] for j, c in self.f_ul.items()))


def _add_z(target: ModelProblem, cfg: GameConfig, T: int, z) -> np.ndarray:
    """ACA columns: fixed when ``z`` is given, else binaries under the budget."""
    grid = np.empty((len(cfg.fsp_nodes), T), dtype=np.int64)
    for f, n in enumerate(cfg.fsp_nodes):
        for t in range(T):
            if z is None:
                grid[f, t] = target.add_binary(_name("z", n, t))
            else:
                v = float(z[f, t])
                grid[f, t] = target.add_var(_name("z", n, t), v, v)
        if z is None:
            target.add_row([(int(c), 1.0) for c in grid[f]], LE, cfg.b_aca, "budget", (n,))
    return grid


def build_gaming_mpec(net, envs, cfg: GameConfig, z, scen: Scenario, presolve: bool = True) -> Mpec:
    """Single-level MILP of the FSP's strategic baseline.

    ``z=None`` leaves the activations as budget-constrained binaries, which
    is the constraint set of the high-point relaxation of the trilevel game.
    Unless ``presolve`` is off, the redispatch LP is reduced exactly before
    its KKT conditions are written.
    """
    T = scen.horizon
    if z is not None:
        z = np.asarray(z, dtype=float)
        check_budget(z, cfg)
    target = ModelProblem("gaming_mpec")
    zc = _add_z(target, cfg, T, z)
    ml = ml_template(envs, cfg, scen)
    col = embed_primal(ml, target, prefix="")
    pda = _map_grid(col, _grid(ml, cfg, "pda", T))
    ll, feasible = _reduced(ll_template(net, envs, cfg, scen, embedded=presolve), LL_DROPPABLE, presolve)
    if not feasible:
        _mark_infeasible(target, "redispatch network infeasible")
    system = kkt_mod.build_kkt(ll, target, cfg.big_M, prefix="ll.", linking_families=("aca_up",),
                               tight_slack=presolve)
    erc = _map_grid(system.var_map, _grid(ll, cfg, "erc", T))
    pev = _map_grid(system.var_map, _grid(ll, cfg, "pev", T))
    f_ml, f_ul = {}, {}
    for f in range(len(cfg.fsp_nodes)):
        for t in range(T):
            if pda[f, t] >= 0:
                f_ml[int(pda[f, t])] = scen.da_price[t] * cfg.dt
            if erc[f, t] >= 0:
                f_ml[int(erc[f, t])] = -cfg.pi_rc
                f_ul[int(erc[f, t])] = float(scen.rc_spread[t])
    target.set_objective(f_ml)
    linking: dict[tuple[int, int], list[int]] = {}
    for fam in ("aca_up", "ll.aca_up", "linking_M"):
        for r in target.family(fam):
            row = target.rows[r]
            key = row.key if fam != "linking_M" else row.key[1]
            linking.setdefault(tuple(key), []).append(r)
    return Mpec(target, system, ll, zc, pda, erc, pev, f_ml, f_ul, linking)


@dataclass
class NoAnticipation:
    problem: ModelProblem
    z: np.ndarray
    pda: np.ndarray
    erc: np.ndarray


def build_aca_no_anticipation(net, envs, cfg: GameConfig, scen: Scenario,
                              presolve: bool = True) -> NoAnticipation:
    """DSO activations against a price-taking FSP whose baseline LP is KKT-embedded.

    The redispatch rows sit directly in the DSO's constraint set and the DSO
    objective is the redispatch cost.
    """
    T = scen.horizon
    target = ModelProblem("aca_no_anticipation")
    zc = _add_z(target, cfg, T, None)
    ml_full = ml_template(envs, cfg, scen)
    ml, feasible = _reduced(ml_full, ("aca_up",), presolve)
    if not feasible:
        _mark_infeasible(target, "baseline envelope infeasible")
    # no-gaming baseline LP: z is a param, pda its decision
    ml_kkt = kkt_mod.build_kkt(ml, target, cfg.big_M, prefix="", linking_families=("aca_up",))
    ll = ll_template(net, envs, cfg, scen)
    col = embed_primal(ll, target, prefix="ll.")
    target.set_objective({int(col[j]): c for j, c in ll.objective.items()})
    pda = _map_grid(ml_kkt.var_map, _grid(ml, cfg, "pda", T))
    erc = _map_grid(col, _grid(ll, cfg, "erc", T))
    return NoAnticipation(target, zc, pda, erc)


# -- solving helpers -------------------------------------------------------------

@dataclass
class RedispatchPlan:
    e_rc: np.ndarray  # (fsp, step) MWh
    p_ev: np.ndarray  # (fsp, step) MW
    P: np.ndarray  # (branch, step) pu
    Q: np.ndarray
    V: np.ndarray  # (bus, step) pu^2
    shed_mwh: float = 0.0


@dataclass
class RedispatchResult:
    status: str
    plan: RedispatchPlan | None
    dso_cost: float  # sum spread * E_rc
    fsp_cost: float  # DA cost of the baseline minus redispatch income
    da_cost: float

    @property
    def shed_mwh(self) -> float:
        return self.plan.shed_mwh if self.plan is not None else math.nan


# FSP responses are solved tightly: the DSO's tie-break among FSP optima is
# only meaningful if the FSP optimum itself is exact.
INNER_GAP = 1e-9


def _lex_tol(value: float) -> float:
    return 1e-7 * (1.0 + abs(value))


def _lp_lex_tol(value: float) -> float:
    return 1e-9 * (1.0 + abs(value))


def redispatch(net, envs, cfg: GameConfig, z, baseline, scen: Scenario) -> RedispatchResult:
    """Solve the redispatch LP for fixed activations and baseline.

    Ties between cost-optimal redispatch plans are resolved in favour of the
    FSP (largest compensated volume).  Flow-limit violations that cannot be
    redispatched away are absorbed by the penalized ``shed`` columns.
    """
    T = scen.horizon
    baseline = np.asarray(baseline, dtype=float)
    p = build_ll(net, envs, cfg, z, baseline, scen, soft=True)
    res = solve_lp(p)
    da_cost = float(np.sum(baseline * scen.da_price[None, :]) * cfg.dt)
    if not res.ok:
        return RedispatchResult(res.status, None, math.nan, math.nan, da_cost)
    erc = _grid(p, cfg, "erc", T)
    tie = p.copy()
    tie.add_row(p.objective.items(), LE, res.objective + _lp_lex_tol(res.objective), "lex")
    tie.set_objective({int(c): -cfg.pi_rc for c in erc.ravel() if c >= 0})
    res2 = solve_lp(tie)
    x = res2.x if res2.ok else res.x
    plan = _plan(p, net, cfg, T, x)
    dso = float(np.sum(plan.e_rc * scen.rc_spread[None, :]))
    fsp = da_cost - cfg.pi_rc * float(plan.e_rc.sum())
    return RedispatchResult(OPTIMAL, plan, dso, fsp, da_cost)


def _plan(p: ModelProblem, net, cfg, T, x) -> RedispatchPlan:
    erc = grid_values(x, _grid(p, cfg, "erc", T))
    pev = grid_values(x, _grid(p, cfg, "pev", T))
    nb = len(net.branches)
    P = np.array([[x[p.var(f"P[{b.frm}-{b.to},{t}]")] for t in range(T)] for b in net.branches])
    Q = np.array([[x[p.var(f"Q[{b.frm}-{b.to},{t}]")] for t in range(T)] for b in net.branches])
    V = np.array([[x[p.var(f"v[{b.id},{t}]")] for t in range(T)] for b in net.buses])
    shed = 0.0
    if p.has_var(f"shed[{net.branches[0].frm}-{net.branches[0].to},0]"):
        shed = sum(x[p.var(f"shed[{b.frm}-{b.to},{t}]")] for b in net.branches for t in range(T))
        shed *= net.base_mva * cfg.dt
    return RedispatchPlan(np.maximum(erc, 0.0), pev, P.reshape(nb, T), Q.reshape(nb, T),
                          V.reshape(len(net.buses), T), float(shed))


@dataclass
class BaselineResult:
    status: str
    baseline: np.ndarray | None
    f_ml: float
    f_ul: float
    e_rc: np.ndarray | None = None
    nodes: int = 0


def solve_no_gaming(envs, cfg: GameConfig, z, scen: Scenario) -> BaselineResult:
    p = build_ml_no_gaming(envs, cfg, z, scen)
    res = solve_lp(p)
    if not res.ok:
        return BaselineResult(res.status, None, math.nan, math.nan)
    pda = grid_values(res.x, _grid(p, cfg, "pda", scen.horizon))
    return BaselineResult(OPTIMAL, np.maximum(pda, 0.0), res.objective, math.nan)


def fix_z(m: Mpec, z, budget: bool = True) -> Mpec:
    """Copy of an MPEC with the activation columns fixed to ``z``.

    With ``budget`` off the budget rows are relaxed, so activation plans
    beyond the budget can be evaluated (used for bounds).
    """
    from dataclasses import replace
    p = m.problem.copy()
    z = np.asarray(z, dtype=float)
    for f in range(m.z.shape[0]):
        for t in range(m.z.shape[1]):
            p.fix(int(m.z[f, t]), float(z[f, t]))
    if not budget:
        for r in p.family("budget"):
            p.rows[r] = replace(p.rows[r], rhs=float(m.z.shape[1]))
    return replace(m, problem=p)


def gaming_response(m: Mpec, cfg: GameConfig) -> SolveResult:
    """First phase of :func:`solve_gaming`: the FSP's optimal value, solved tightly."""
    return solve_milp(m.problem, min(cfg.rel_gap, INNER_GAP))


def gaming_tiebreak(m: Mpec, cfg: GameConfig, first: SolveResult, optimistic: bool = True) -> BaselineResult:
    """Second phase of :func:`solve_gaming` given the first-phase result."""
    if first.x is None:
        return BaselineResult(first.status, None, math.nan, math.nan, nodes=first.nodes)
    x, nodes = first.x, first.nodes
    f_ml = m.f_ml_value(x)
    if optimistic and m.f_ul and m.f_ul_value(x) > 1e-9:
        lex = m.problem.copy()
        lex.add_row(m.f_ml.items(), LE, f_ml + _lex_tol(f_ml), "lex")
        lex.set_objective(m.f_ul)
        res2 = solve_milp(lex, min(cfg.rel_gap, INNER_GAP))
        nodes += res2.nodes
        if res2.x is not None:
            x = res2.x
    return BaselineResult(first.status, np.maximum(grid_values(x, m.pda), 0.0), m.f_ml_value(x),
                          m.f_ul_value(x), np.maximum(grid_values(x, m.erc), 0.0), nodes)


def solve_gaming(net, envs, cfg: GameConfig, z, scen: Scenario, optimistic: bool = True,
                 mpec: Mpec | None = None) -> BaselineResult:
    """Strategic baseline for fixed ``z``.

    With ``optimistic`` the FSP's optimal baselines are searched a second
    time for the one with the lowest redispatch cost for the DSO.
    """
    m = mpec or build_gaming_mpec(net, envs, cfg, z, scen)
    return gaming_tiebreak(m, cfg, gaming_response(m, cfg), optimistic)


def solve_no_anticipation(net, envs, cfg: GameConfig, scen: Scenario):
    """Returns (status, z, objective) of the no-anticipation activation problem.

    Among cost-optimal activation plans the one with fewest activations is
    returned (an unused activation has no value to the DSO).
    """
    m = build_aca_no_anticipation(net, envs, cfg, scen)
    res = solve_milp(m.problem, cfg.rel_gap)
    if res.x is None:
        return res.status, None, math.nan
    obj = res.objective
    lex = m.problem.copy()
    lex.add_row(m.problem.objective.items(), LE, obj + max(cfg.rel_gap * abs(obj), 1e-6), "lex")
    lex.set_objective({int(c): 1.0 for c in m.z.ravel()})
    res2 = solve_milp(lex, cfg.rel_gap)
    x = res2.x if res2.x is not None else res.x
    z = np.round(x[m.z])
    return res.status, z, float(m.problem.objective_value(x))


def realized_redispatch(net, envs, cfg: GameConfig, z, baseline, truth: Scenario) -> RedispatchResult:
    return redispatch(net, envs, cfg, z, baseline, truth)
