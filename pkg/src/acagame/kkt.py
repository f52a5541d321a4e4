"""KKT reformulation of a parametric LP by transposition of its tagged rows.

Sign convention for the multipliers (all ``mu >= 0``)::

    c_j + sum_eq lam_i a_ij + sum_le mu_i a_ij - sum_ge mu_i a_ij = 0

Complementary slackness ``mu_i * slack_i = 0`` is linearized with one binary
``z_i`` per inequality: ``mu_i <= M (1 - z_i)`` and ``slack_i <= M z_i``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from scipy.sparse.csgraph import connected_components

from .milp import (EQ, GE, LE, OPTIMAL, ModelError, ModelProblem, Row, SolveResult, implied_bounds,
                   row_range, solve_lp)

log = logging.getLogger(__name__)

DEFAULT_BIG_M = 1e4


def _all_rows(ll: ModelProblem) -> list[Row]:
    """LL rows plus finite bounds of its decision variables as explicit rows."""
    rows = list(ll.rows)
    for j in range(ll.n_vars):
        if ll.param[j]:
            continue
        if math.isfinite(ll.lb[j]):
            rows.append(Row(np.array([j]), np.array([1.0]), GE, ll.lb[j], "var_lo", (ll.names[j],)))
        if math.isfinite(ll.ub[j]):
            rows.append(Row(np.array([j]), np.array([1.0]), LE, ll.ub[j], "var_up", (ll.names[j],)))
    return rows


@dataclass
class DualVarSet:
    """Multipliers of an LP, one per row of :func:`_all_rows` (nan where absent)."""
    values: np.ndarray
    families: list[str]
    keys: list

    def by_family(self, family: str) -> dict:
        return {k: float(v) for f, k, v in zip(self.families, self.keys, self.values) if f == family}

    def copy(self) -> "DualVarSet":
        return DualVarSet(self.values.copy(), list(self.families), list(self.keys))


def duals_from_lp(ll: ModelProblem, result: SolveResult) -> DualVarSet:
    """Convert solver sensitivities into the nonnegative-mu convention."""
    if result.status != OPTIMAL or result.duals is None:
        raise ModelError("duals require an optimal LP solution")
    rows = _all_rows(ll)
    vals = np.empty(len(rows))
    for i, row in enumerate(ll.rows):
        y = result.duals[i]
        vals[i] = y if row.sense == GE else -y
    rc = result.reduced_costs
    for i in range(ll.n_rows, len(rows)):
        j = int(rows[i].cols[0])
        vals[i] = max(rc[j], 0.0) if rows[i].sense == GE else max(-rc[j], 0.0)
    return DualVarSet(vals, [r.family for r in rows], [r.key for r in rows])


@dataclass
class KktReport:
    stationarity: float
    primal: float
    dual: float
    complementarity: float

    def worst(self) -> float:
        return max(self.stationarity, self.primal, self.dual, self.complementarity)


def stationarity_residuals(x: np.ndarray, duals: DualVarSet, ll: ModelProblem) -> np.ndarray:
    rows = _all_rows(ll)
    grad = ll.objective_vector().copy()
    for row, mult in zip(rows, duals.values):
        sign = -1.0 if row.sense == GE else 1.0
        grad[row.cols] += sign * mult * row.vals
    dec = ~np.asarray(ll.param, dtype=bool)
    return np.where(dec, grad, 0.0)


def verify_kkt(x, duals: DualVarSet, ll: ModelProblem) -> KktReport:
    """Max residual of each KKT block at a primal/dual pair of the LL."""
    x = np.asarray(x, dtype=float)
    if len(x) != ll.n_vars or len(duals.values) != len(_all_rows(ll)):
        raise ModelError("primal/dual dimensions do not match the LL problem")
    rows = _all_rows(ll)
    stat = float(np.max(np.abs(stationarity_residuals(x, duals, ll)), initial=0.0))
    primal = max((r.violation(x) for r in rows), default=0.0)
    dual = 0.0
    comp = 0.0
    for row, mult in zip(rows, duals.values):
        if row.sense == EQ:
            continue
        dual = max(dual, -mult)
        slack = row.rhs - row.activity(x) if row.sense == LE else row.activity(x) - row.rhs
        comp = max(comp, abs(mult * slack))
    return KktReport(stat, primal, dual, comp)


def slater_margin(ll: ModelProblem) -> float:
    """Largest uniform slack on all inequalities (params at their bounds).

    A nonpositive margin flags a degenerate instance; for linear rows the KKT
    conditions stay necessary and sufficient regardless.
    """
    p = ModelProblem("slater")
    for j in range(ll.n_vars):
        p.add_var(ll.names[j], ll.lb[j], ll.ub[j])
    s = p.add_var("__s", -math.inf, 1.0)
    for row in _all_rows(ll):
        terms = list(zip(row.cols.tolist(), row.vals.tolist()))
        if row.sense == LE:
            terms.append((s, 1.0))
        elif row.sense == GE:
            terms.append((s, -1.0))
        p.add_row(terms, row.sense, row.rhs, row.family)
    p.set_objective({s: -1.0})
    res = solve_lp(p)
    return float(res.x[s]) if res.ok else -math.inf


@dataclass
class Presolved:
    problem: ModelProblem
    feasible: bool  # whether the removed decoupled blocks admit a solution
    dropped_static: int
    dropped_redundant: int


def presolve_lower_level(ll: ModelProblem, droppable=(), tol: float = 1e-9) -> Presolved:
    """Shrink a parametric LP before its KKT conditions are generated.

    Two exact reductions: blocks of rows that share no column with a param or
    a costed column are feasibility checks only and are solved once and
    removed; rows of the ``droppable`` families that bound propagation over
    the remaining rows (params within their bounds) shows to be implied are
    removed.  The optimal solution set in the kept columns is unchanged.
    """
    A = ll.matrix()
    n_rows, n_vars = A.shape
    from scipy import sparse
    B = sparse.bmat([[None, A], [A.T, None]]).tocsr()
    n_comp, label = connected_components(B, directed=False)
    live = np.zeros(n_comp, dtype=bool)
    for j in range(n_vars):
        if ll.param[j] or ll.objective.get(j, 0.0) != 0.0:
            live[label[n_rows + j]] = True
    static = [i for i in range(n_rows) if not live[label[i]]]
    feasible = True
    if static:
        block = ll.restrict(static, name="static")
        block.set_objective({})
        feasible = solve_lp(block).ok
    kept = [i for i in range(n_rows) if live[label[i]]]
    droppable = set(droppable)
    base = [i for i in kept if ll.rows[i].family not in droppable]
    lo, hi = implied_bounds(ll, base)
    final, redundant = [], 0
    for i in kept:
        row = ll.rows[i]
        if row.family in droppable:
            amin, amax = row_range(row, lo, hi)
            implied = ((row.sense == LE and amax <= row.rhs + tol)
                       or (row.sense == GE and amin >= row.rhs - tol))
            if implied:
                redundant += 1
                continue
        final.append(i)
    return Presolved(ll.restrict(final), feasible, len(static), redundant)


@dataclass
class KktSystem:
    var_map: np.ndarray  # LL column -> target column
    dual_cols: np.ndarray  # LL row -> multiplier column
    cs_cols: np.ndarray  # LL row -> CS binary column (-1 for equalities)
    primal_rows: list[int]
    stationarity_rows: dict[int, int]  # LL decision column -> target row
    cs_dual_rows: list[int]
    cs_slack_rows: list[int]
    linking_rows: list[int]
    big_M: float
    families: list[str] = field(default_factory=list)
    keys: list = field(default_factory=list)
    slater: float = math.nan

    def dual_values(self, x_target: np.ndarray) -> DualVarSet:
        return DualVarSet(x_target[self.dual_cols].astype(float), list(self.families), list(self.keys))

    def ll_values(self, x_target: np.ndarray) -> np.ndarray:
        return x_target[self.var_map]

    def rows_of(self, family: str) -> list[int]:
        return [i for i, f in enumerate(self.families) if f == family]


def slack_bounds(ll: ModelProblem) -> np.ndarray:
    """Upper bound on the slack of every inequality of :func:`_all_rows` (inf if none).

    Bound propagation over all rows with params inside their bounds; used to
    shrink the primal side of the big-M pairs.
    """
    lo, hi = implied_bounds(ll)
    out = []
    for row in _all_rows(ll):
        amin, amax = row_range(row, lo, hi)
        if row.sense == LE:
            out.append(row.rhs - amin)
        elif row.sense == GE:
            out.append(amax - row.rhs)
        else:
            out.append(0.0)
    return np.nan_to_num(np.asarray(out, dtype=float), nan=math.inf)


def build_kkt(ll: ModelProblem, target: ModelProblem, big_M: float = DEFAULT_BIG_M,
              prefix: str = "ll.", linking_families=(), check_slater: bool = False,
              tight_slack: bool = False) -> KktSystem:
    """Append primal feasibility, dual feasibility, stationarity and big-M CS of ``ll``.

    Param columns of ``ll`` are looked up by name in ``target``; every other
    column is created there as ``prefix + name``.  CS slack rows stemming from
    ``linking_families`` are tagged ``linking_M``.
    """
    if ll.is_mip:
        raise ModelError("build_kkt needs a continuous lower level")
    var_map = np.empty(ll.n_vars, dtype=np.int64)
    for j, name in enumerate(ll.names):
        if ll.param[j]:
            var_map[j] = target.var(name)
        else:
            var_map[j] = target.add_var(prefix + name, -math.inf, math.inf)
    rows = _all_rows(ll)
    n = len(rows)
    dual_cols = np.empty(n, dtype=np.int64)
    cs_cols = np.full(n, -1, dtype=np.int64)
    primal_rows, cs_dual_rows, cs_slack_rows, linking_rows = [], [], [], []
    columns: dict[int, list[tuple[int, float]]] = {j: [] for j in range(ll.n_vars) if not ll.param[j]}
    linking_families = set(linking_families)
    M = float(big_M)
    slack_M = np.minimum(slack_bounds(ll), M) if tight_slack else np.full(n, M)
    for i, row in enumerate(rows):
        tcols = var_map[row.cols]
        terms = list(zip(tcols.tolist(), row.vals.tolist()))
        primal_rows.append(target.add_row(terms, row.sense, row.rhs, prefix + row.family, row.key))
        tag = f"{prefix}{row.family}{'' if row.key is None else list(row.key)}"
        if row.sense == EQ:
            dual_cols[i] = target.add_var(f"lam[{tag}]", -math.inf, math.inf)
        else:
            dual_cols[i] = target.add_var(f"mu[{tag}]", 0.0, math.inf)
            z = target.add_binary(f"zcs[{tag}]")
            cs_cols[i] = z
            cs_dual_rows.append(target.add_row([(int(dual_cols[i]), 1.0), (z, M)], LE, M,
                                               "cs_dual", (prefix + row.family, row.key)))
            Ms = float(max(slack_M[i], 0.0))
            if row.sense == LE:  # rhs - a x <= M z
                slack_terms = [(c, -v) for c, v in terms] + [(z, -Ms)]
                rhs = -row.rhs
            else:  # a x - rhs <= M z
                slack_terms = terms + [(z, -Ms)]
                rhs = row.rhs
            fam = "linking_M" if row.family in linking_families else "cs_slack"
            r = target.add_row(slack_terms, LE, rhs, fam, (prefix + row.family, row.key))
            cs_slack_rows.append(r)
            if fam == "linking_M":
                linking_rows.append(r)
        sign = -1.0 if row.sense == GE else 1.0
        for c, v in zip(row.cols.tolist(), row.vals.tolist()):
            if not ll.param[c]:
                columns[c].append((int(dual_cols[i]), sign * v))
    stationarity_rows = {}
    c = ll.objective_vector()
    for j, terms in columns.items():
        stationarity_rows[j] = target.add_row(terms, EQ, -c[j], "stationarity", (ll.names[j],))
    slater = slater_margin(ll) if check_slater else math.nan
    if check_slater and not slater > 0:
        log.info("lower level %s has no strictly feasible point (margin %.3g)", ll.name, slater)
    return KktSystem(var_map, dual_cols, cs_cols, primal_rows, stationarity_rows, cs_dual_rows,
                     cs_slack_rows, linking_rows, M, [r.family for r in rows], [r.key for r in rows],
                     slater)


def big_m_margin(kkt: KktSystem, ll: ModelProblem, x_target: np.ndarray) -> float:
    """Largest |multiplier| or |slack| at a solution, relative to big-M."""
    mults = np.abs(x_target[kkt.dual_cols])
    x_ll = x_target[kkt.var_map]
    slacks = [abs(r.rhs - r.activity(x_ll)) for r in _all_rows(ll) if r.sense != EQ]
    worst = max(float(np.max(mults, initial=0.0)), max(slacks, default=0.0))
    if worst >= 0.5 * kkt.big_M:
        log.warning("big-M %.3g too small: KKT magnitude %.3g reached", kkt.big_M, worst)
    return worst / kkt.big_M
