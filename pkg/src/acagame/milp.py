"""Solver-neutral LP/MILP modeling layer.

A :class:`ModelProblem` is a plain container of bounded variables, tagged
linear rows and a linear objective (always minimized).  Two solve paths are
provided:

* ``backend="highs"`` hands the problem to HiGHS through :mod:`scipy.optimize`
  (default, fast);
* ``backend="native"`` runs a small best-bound branch-and-bound on top of the
  HiGHS LP relaxations, with lowest-index branching and FIFO tie breaking.

LP duals are reported as sensitivities ``d(objective)/d(rhs)``: ``>=`` rows
have nonnegative duals, ``<=`` rows nonpositive, ``==`` rows are free.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np
from scipy import sparse
from scipy.optimize import Bounds, LinearConstraint, linprog, milp

FEAS_TOL = 1e-7
INT_TOL = 1e-6
DEFAULT_REL_GAP = 1e-5

LE, EQ, GE = "<=", "==", ">="
_SENSES = (LE, EQ, GE)

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
GAP_LIMIT = "gap_limit"
ERROR = "error"


class ModelError(ValueError):
    """Raised for malformed problems (unknown variables, bad bounds...)."""


@dataclass(frozen=True)
class Row:
    cols: np.ndarray
    vals: np.ndarray
    sense: str
    rhs: float
    family: str
    key: tuple | None = None

    def activity(self, x: np.ndarray) -> float:
        return float(self.vals @ x[self.cols])

    def violation(self, x: np.ndarray) -> float:
        act = self.activity(x)
        if self.sense == LE:
            return max(0.0, act - self.rhs)
        if self.sense == GE:
            return max(0.0, self.rhs - act)
        return abs(act - self.rhs)


class ModelProblem:
    """Variables, tagged rows and a minimization objective.

    Variables flagged ``param`` are placeholders for values decided by an
    outer level; they are kept as ordinary (usually fixed) columns so the
    same problem can be solved stand-alone or transposed into KKT form.
    """

    def __init__(self, name: str = "model"):
        self.name = name
        self.names: list[str] = []
        self.lb: list[float] = []
        self.ub: list[float] = []
        self.integer: list[bool] = []
        self.param: list[bool] = []
        self.rows: list[Row] = []
        self.objective: dict[int, float] = {}
        self.obj_const = 0.0
        self._index: dict[str, int] = {}
        self._families: dict[str, list[int]] = {}

    # -- variables -----------------------------------------------------------
    @property
    def n_vars(self) -> int:
        return len(self.names)

    @property
    def n_rows(self) -> int:
        return len(self.rows)

    @property
    def is_mip(self) -> bool:
        return any(self.integer)

    def add_var(self, name: str, lb: float = 0.0, ub: float = math.inf,
                integer: bool = False, param: bool = False) -> int:
        if name in self._index:
            raise ModelError(f"duplicate variable {name!r}")
        if lb > ub:
            raise ModelError(f"variable {name!r}: lb {lb} > ub {ub}")
        self._index[name] = len(self.names)
        self.names.append(name)
        self.lb.append(float(lb))
        self.ub.append(float(ub))
        self.integer.append(bool(integer))
        self.param.append(bool(param))
        return len(self.names) - 1

    def add_binary(self, name: str) -> int:
        return self.add_var(name, 0.0, 1.0, integer=True)

    def var(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise ModelError(f"unknown variable {name!r}") from None

    def has_var(self, name: str) -> bool:
        return name in self._index

    def set_bounds(self, col: int, lb: float, ub: float) -> None:
        if lb > ub + FEAS_TOL:
            raise ModelError(f"variable {self.names[col]!r}: lb {lb} > ub {ub}")
        self.lb[col] = float(lb)
        self.ub[col] = float(max(lb, ub))

    def fix(self, col: int, value: float) -> None:
        self.lb[col] = self.ub[col] = float(value)

    # -- rows ----------------------------------------------------------------
    def add_row(self, terms: Mapping[int, float] | Iterable[tuple[int, float]],
                sense: str, rhs: float, family: str, key: tuple | None = None) -> int:
        if sense not in _SENSES:
            raise ModelError(f"bad sense {sense!r}")
        items = terms.items() if isinstance(terms, Mapping) else terms
        merged: dict[int, float] = {}
        for col, coef in items:
            if not 0 <= col < self.n_vars:
                raise ModelError(f"row {family}{key}: unknown column {col}")
            merged[col] = merged.get(col, 0.0) + float(coef)
        cols = np.fromiter(merged.keys(), dtype=np.int64, count=len(merged))
        vals = np.fromiter(merged.values(), dtype=float, count=len(merged))
        self.rows.append(Row(cols, vals, sense, float(rhs), family, key))
        self._families.setdefault(family, []).append(len(self.rows) - 1)
        return len(self.rows) - 1

    def family(self, name: str) -> list[int]:
        return list(self._families.get(name, ()))

    @property
    def families(self) -> list[str]:
        return list(self._families)

    def set_objective(self, terms: Mapping[int, float] | Iterable[tuple[int, float]],
                      const: float = 0.0) -> None:
        items = terms.items() if isinstance(terms, Mapping) else terms
        obj: dict[int, float] = {}
        for col, coef in items:
            obj[col] = obj.get(col, 0.0) + float(coef)
        self.objective = obj
        self.obj_const = float(const)

    def objective_vector(self) -> np.ndarray:
        c = np.zeros(self.n_vars)
        for col, coef in self.objective.items():
            c[col] += coef
        return c

    def objective_value(self, x: np.ndarray) -> float:
        return float(self.objective_vector() @ x) + self.obj_const

    def copy(self) -> "ModelProblem":
        other = ModelProblem(self.name)
        other.names = list(self.names)
        other.lb = list(self.lb)
        other.ub = list(self.ub)
        other.integer = list(self.integer)
        other.param = list(self.param)
        other.rows = list(self.rows)
        other.objective = dict(self.objective)
        other.obj_const = self.obj_const
        other._index = dict(self._index)
        other._families = {k: list(v) for k, v in self._families.items()}
        return other

    def fold_columns(self, rows: Iterable[int], values: Mapping[int, float]) -> None:
        """Replace selected columns by constants inside the given rows only."""
        for r in rows:
            row = self.rows[r]
            mask = np.array([c in values for c in row.cols], dtype=bool)
            if not mask.any():
                continue
            shift = sum(values[int(c)] * v for c, v in zip(row.cols[mask], row.vals[mask]))
            self.rows[r] = Row(row.cols[~mask], row.vals[~mask], row.sense,
                               row.rhs - shift, row.family, row.key)

    def restrict(self, rows: Iterable[int], name: str | None = None) -> "ModelProblem":
        """Copy holding only ``rows``; unreferenced non-param columns without cost are dropped."""
        rows = sorted(set(int(r) for r in rows))
        used = set(self.objective)
        for r in rows:
            used.update(self.rows[r].cols.tolist())
        keep = [j for j in range(self.n_vars) if j in used or self.param[j]]
        new_index = {j: i for i, j in enumerate(keep)}
        other = ModelProblem(name or self.name)
        for j in keep:
            other.add_var(self.names[j], self.lb[j], self.ub[j], self.integer[j], self.param[j])
        for r in rows:
            row = self.rows[r]
            other.add_row([(new_index[int(c)], v) for c, v in zip(row.cols, row.vals)],
                          row.sense, row.rhs, row.family, row.key)
        other.set_objective({new_index[j]: c for j, c in self.objective.items()}, self.obj_const)
        return other

    def matrix(self) -> sparse.csr_matrix:
        indptr = np.zeros(self.n_rows + 1, dtype=np.int64)
        for i, row in enumerate(self.rows):
            indptr[i + 1] = indptr[i] + len(row.cols)
        if self.rows:
            indices = np.concatenate([r.cols for r in self.rows])
            data = np.concatenate([r.vals for r in self.rows])
        else:
            indices = np.zeros(0, dtype=np.int64)
            data = np.zeros(0)
        return sparse.csr_matrix((data, indices, indptr), shape=(self.n_rows, self.n_vars))

    def validate(self) -> None:
        for j in range(self.n_vars):
            if self.lb[j] > self.ub[j]:
                raise ModelError(f"variable {self.names[j]!r}: lb > ub")

    def max_violation(self, x: np.ndarray) -> float:
        worst = 0.0
        for row in self.rows:
            worst = max(worst, row.violation(x))
        lb = np.asarray(self.lb)
        ub = np.asarray(self.ub)
        worst = max(worst, float(np.max(np.maximum(lb - x, 0.0), initial=0.0)),
                    float(np.max(np.maximum(x - ub, 0.0), initial=0.0)))
        return worst

    def to_lp_text(self) -> str:
        """Render in (CPLEX) LP-file syntax, for debugging dumps."""
        def expr(cols, vals):
            parts = [f"{'+' if v >= 0 else '-'} {abs(v):.12g} {_lp_name(self.names[c])}"
                     for c, v in zip(cols, vals)]
            return " ".join(parts) if parts else "0"

        c = self.objective_vector()
        nz = np.nonzero(c)[0]
        lines = [f"\\ {self.name}", "Minimize", " obj: " + expr(nz, c[nz]), "Subject To"]
        for i, row in enumerate(self.rows):
            op = {LE: "<=", GE: ">=", EQ: "="}[row.sense]
            lines.append(f" r{i}_{_lp_name(row.family)}: {expr(row.cols, row.vals)} {op} {row.rhs:.12g}")
        lines.append("Bounds")
        for j, name in enumerate(self.names):
            lo = "-inf" if self.lb[j] == -math.inf else f"{self.lb[j]:.12g}"
            hi = "+inf" if self.ub[j] == math.inf else f"{self.ub[j]:.12g}"
            lines.append(f" {lo} <= {_lp_name(name)} <= {hi}")
        ints = [_lp_name(n) for n, flag in zip(self.names, self.integer) if flag]
        if ints:
            lines.append("General")
            lines.append(" " + " ".join(ints))
        lines.append("End")
        return "\n".join(lines) + "\n"


def implied_bounds(problem: ModelProblem, rows: Iterable[int] | None = None,
                   passes: int = 30, tol: float = 1e-9) -> tuple[np.ndarray, np.ndarray]:
    """Variable bounds tightened by propagating the given rows (all by default).

    The result is an outer box of the feasible set: valid, not necessarily tight.
    """
    lo = np.array(problem.lb, dtype=float)
    hi = np.array(problem.ub, dtype=float)
    rows = [problem.rows[r] for r in (range(problem.n_rows) if rows is None else rows)]
    for _ in range(passes):
        changed = False
        for row in rows:
            a = row.vals
            xl, xu = lo[row.cols], hi[row.cols]
            tmin = np.where(a > 0, a * xl, a * xu)
            tmax = np.where(a > 0, a * xu, a * xl)
            for sense, total in ((LE, tmin), (GE, tmax)):
                if row.sense not in (sense, EQ):
                    continue
                finite = np.isfinite(total)
                n_inf = int((~finite).sum())
                if n_inf > 1:
                    continue
                s = float(total[finite].sum())
                for k in range(len(a)):
                    if n_inf == 1 and finite[k]:
                        continue
                    rest = s - (total[k] if finite[k] else 0.0)
                    bound = (row.rhs - rest) / a[k]
                    col = row.cols[k]
                    # a_k x_k <= rhs - rest for LE, >= for GE
                    upper = (sense == LE) == (a[k] > 0)
                    if upper and bound < hi[col] - tol * (1 + abs(bound)):
                        hi[col] = bound
                        changed = True
                    elif not upper and bound > lo[col] + tol * (1 + abs(bound)):
                        lo[col] = bound
                        changed = True
        if not changed:
            break
    return lo, hi


def row_range(row: Row, lo: np.ndarray, hi: np.ndarray) -> tuple[float, float]:
    a = row.vals
    xl, xu = lo[row.cols], hi[row.cols]
    with np.errstate(invalid="ignore"):
        amin = float(np.sum(np.where(a > 0, a * xl, a * xu)))
        amax = float(np.sum(np.where(a > 0, a * xu, a * xl)))
    return amin, amax


def _lp_name(name: str) -> str:
    return "".join(ch if ch.isalnum() or ch in "_." else "_" for ch in name)


@dataclass(frozen=True)
class SolveResult:
    status: str
    objective: float = math.nan
    x: np.ndarray | None = None
    duals: np.ndarray | None = None
    reduced_costs: np.ndarray | None = None
    gap: float = 0.0
    bound: float = math.nan
    nodes: int = 0
    iterations: int = 0
    message: str = ""
    extra: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.status == OPTIMAL

    def value(self, col: int) -> float:
        return float(self.x[col])


# -- LP ------------------------------------------------------------------------

def _split_rows(problem: ModelProblem):
    A = problem.matrix()
    senses = np.array([r.sense for r in problem.rows], dtype=object)
    rhs = np.array([r.rhs for r in problem.rows], dtype=float)
    eq = np.nonzero(senses == EQ)[0]
    le = np.nonzero(senses == LE)[0]
    ge = np.nonzero(senses == GE)[0]
    ub_rows = np.concatenate([le, ge])
    sign = np.concatenate([np.ones(len(le)), -np.ones(len(ge))])
    A_ub = sparse.diags(sign) @ A[ub_rows] if len(ub_rows) else None
    b_ub = sign * rhs[ub_rows] if len(ub_rows) else None
    A_eq = A[eq] if len(eq) else None
    b_eq = rhs[eq] if len(eq) else None
    return A_ub, b_ub, A_eq, b_eq, eq, ub_rows, sign


def solve_lp(problem: ModelProblem, lb=None, ub=None) -> SolveResult:
    """Solve the continuous problem; integrality flags must be absent.

    ``lb``/``ub`` override the stored bounds (used by the native
    branch-and-bound).
    """
    if problem.is_mip and lb is None:
        raise ModelError("solve_lp called on a problem with integer variables")
    c = problem.objective_vector()
    lo = np.asarray(problem.lb if lb is None else lb, dtype=float)
    hi = np.asarray(problem.ub if ub is None else ub, dtype=float)
    if np.any(lo > hi):
        return SolveResult(INFEASIBLE, message="crossed bounds")
    A_ub, b_ub, A_eq, b_eq, eq, ub_rows, sign = _split_rows(problem)
    bounds = np.column_stack([np.where(np.isinf(lo), None, lo), np.where(np.isinf(hi), None, hi)])
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq, bounds=bounds,
                  method="highs-ds")
    if res.status == 2:
        return SolveResult(INFEASIBLE, message=res.message)
    if res.status == 3:
        return SolveResult(UNBOUNDED, message=res.message)
    if res.status != 0:
        return SolveResult(ERROR, message=res.message)
    duals = np.zeros(problem.n_rows)
    if len(eq):
        duals[eq] = res.eqlin.marginals
    if len(ub_rows):
        duals[ub_rows] = sign * res.ineqlin.marginals
    rc = np.asarray(res.lower.marginals) + np.asarray(res.upper.marginals)
    x = np.asarray(res.x, dtype=float)
    return SolveResult(OPTIMAL, float(res.fun) + problem.obj_const, x, duals, rc,
                       bound=float(res.fun) + problem.obj_const,
                       iterations=int(getattr(res, "nit", 0)), message=res.message)


def dual_objective(problem: ModelProblem, result: SolveResult) -> float:
    """Objective of the LP dual built from ``result``'s multipliers."""
    rhs = np.array([r.rhs for r in problem.rows])
    val = float(result.duals @ rhs) + problem.obj_const
    rc = result.reduced_costs
    lb = np.asarray(problem.lb)
    ub = np.asarray(problem.ub)
    # a positive reduced cost sits on the lower bound, a negative one on the upper
    with np.errstate(invalid="ignore"):
        val += float(np.sum(np.where(rc > 0, rc * np.where(np.isinf(lb), 0.0, lb), 0.0)))
        val += float(np.sum(np.where(rc < 0, rc * np.where(np.isinf(ub), 0.0, ub), 0.0)))
    return val


# -- MILP ----------------------------------------------------------------------

def solve_milp(problem: ModelProblem, rel_gap: float = DEFAULT_REL_GAP,
               node_limit: int | None = None, backend: str = "highs",
               time_limit: float | None = None) -> SolveResult:
    """Solve a MILP to within ``rel_gap``; pure LPs are passed to :func:`solve_lp`."""
    if rel_gap < 0:
        raise ModelError("rel_gap must be nonnegative")
    if not problem.is_mip:
        return solve_lp(problem)
    if backend == "native":
        return _native_bnb(problem, rel_gap, node_limit)
    if backend != "highs":
        raise ModelError(f"unknown backend {backend!r}")
    c = problem.objective_vector()
    A = problem.matrix()
    lo = np.array([-np.inf if r.sense == LE else r.rhs for r in problem.rows])
    hi = np.array([np.inf if r.sense == GE else r.rhs for r in problem.rows])
    options = {"disp": False, "mip_rel_gap": rel_gap, "presolve": True}
    if node_limit is not None:
        options["node_limit"] = int(node_limit)
    if time_limit is not None:
        options["time_limit"] = float(time_limit)
    cons = [LinearConstraint(A, lo, hi)] if problem.n_rows else []
    integrality = np.asarray(problem.integer, dtype=int)
    bounds = Bounds(np.asarray(problem.lb), np.asarray(problem.ub))
    res = milp(c, integrality=integrality, bounds=bounds, constraints=cons, options=options)
    if res.status == 2:
        # presolve occasionally declares big-M models infeasible that are not; confirm without it
        res = milp(c, integrality=integrality, bounds=bounds, constraints=cons,
                   options={**options, "presolve": False})
    nodes = int(getattr(res, "mip_node_count", 0) or 0)
    bound = getattr(res, "mip_dual_bound", None)
    bound = math.nan if bound is None else float(bound) + problem.obj_const
    gap = float(getattr(res, "mip_gap", 0.0) or 0.0)
    if res.status == 2:
        return SolveResult(INFEASIBLE, message=res.message, nodes=nodes)
    if res.status == 3:
        return SolveResult(UNBOUNDED, message=res.message, nodes=nodes)
    if res.x is None:
        return SolveResult(ERROR, message=res.message, nodes=nodes)
    x = _snap_integers(problem, np.asarray(res.x, dtype=float))
    status = OPTIMAL if res.status == 0 else GAP_LIMIT
    return SolveResult(status, float(res.fun) + problem.obj_const, x, gap=gap, bound=bound,
                       nodes=nodes, message=res.message)


def _snap_integers(problem: ModelProblem, x: np.ndarray) -> np.ndarray:
    ints = np.asarray(problem.integer, dtype=bool)
    x = x.copy()
    x[ints] = np.round(x[ints])
    return x


def _native_bnb(problem: ModelProblem, rel_gap: float, node_limit: int | None) -> SolveResult:
    ints = np.nonzero(problem.integer)[0]
    lb0 = np.asarray(problem.lb, dtype=float)
    ub0 = np.asarray(problem.ub, dtype=float)
    lb0[ints] = np.ceil(lb0[ints] - INT_TOL)
    ub0[ints] = np.floor(ub0[ints] + INT_TOL)
    limit = node_limit if node_limit is not None else 100_000

    best_x, best_obj = None, math.inf
    heap: list[tuple[float, int, np.ndarray, np.ndarray]] = []
    seq = 0
    root = solve_lp(problem, lb0, ub0)
    if root.status == UNBOUNDED:
        return SolveResult(UNBOUNDED, message="LP relaxation unbounded")
    if root.status != OPTIMAL:
        return SolveResult(root.status if root.status == INFEASIBLE else ERROR, message=root.message)
    heapq.heappush(heap, (root.objective, seq, lb0, ub0))
    cache = {seq: root}
    nodes = 0
    while heap:
        bound, tag, lo, hi = heapq.heappop(heap)
        relax = cache.pop(tag)
        if bound >= best_obj - rel_gap * max(1.0, abs(best_obj)):
            continue
        if nodes >= limit:
            heapq.heappush(heap, (bound, tag, lo, hi))
            cache[tag] = relax
            break
        nodes += 1
        x = relax.x
        frac = [j for j in ints if abs(x[j] - round(x[j])) > INT_TOL]
        if not frac:
            if relax.objective < best_obj:
                best_obj, best_x = relax.objective, _snap_integers(problem, x)
            continue
        j = frac[0]
        for side in (0, 1):
            lo2, hi2 = lo.copy(), hi.copy()
            if side == 0:
                hi2[j] = math.floor(x[j])
            else:
                lo2[j] = math.ceil(x[j])
            child = solve_lp(problem, lo2, hi2)
            if child.status != OPTIMAL or child.objective >= best_obj:
                continue
            seq += 1
            cache[seq] = child
            heapq.heappush(heap, (child.objective, seq, lo2, hi2))
    open_bound = min((h[0] for h in heap), default=best_obj)
    if best_x is None:
        if heap:
            return SolveResult(GAP_LIMIT, nodes=nodes, bound=open_bound, message="node limit")
        return SolveResult(INFEASIBLE, nodes=nodes, message="no integer solution")
    bound = min(open_bound, best_obj)
    gap = 0.0 if best_obj == bound else (best_obj - bound) / max(abs(best_obj), 1e-10)
    status = OPTIMAL if gap <= rel_gap + 1e-12 else GAP_LIMIT
    return SolveResult(status, best_obj, best_x, gap=gap, bound=bound, nodes=nodes)
