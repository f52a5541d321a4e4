"""Three-stage game per scenario and the Monte Carlo study over scenarios."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .bnb import PlanEvaluator, enumerate_candidates, solve_trilevel
from .ev_fleet import FleetEnvelope
from .milp import GAP_LIMIT, OPTIMAL
from .models import (BaselineResult, GameConfig, realized_redispatch, redispatch, solve_gaming,
                     solve_no_anticipation, solve_no_gaming)
from .network import NetworkModel
from .scenario import (TRUTH_STREAM, PriceModel, Scenario, ScenarioError, UncertaintyConfig, assemble,
                       load_scenario, price_scenario, stop_threshold, stopping_check)

log = logging.getLogger(__name__)

DSO_STRATEGIES = ("none", "no_anticipation", "anticipation")
FSP_STRATEGIES = ("no_gaming", "gaming")
TRUTH_POLICIES = ("same", "file", "fresh")
STREAMS = ("f_ul_expected", "f_ml_expected", "f_ll_expected")
QUANTITIES = STREAMS + ("dso_realized", "fsp_realized")
CSV_COLUMNS = ("pair", "scenario_id") + QUANTITIES + ("nodes_explored", "shed_mwh")


class GameError(ValueError):
    pass


@dataclass(frozen=True)
class StrategyPair:
    dso_aca: str
    fsp: str

    def __post_init__(self):
        if self.dso_aca not in DSO_STRATEGIES:
            raise GameError(f"unknown DSO strategy {self.dso_aca!r}; expected one of {DSO_STRATEGIES}")
        if self.fsp not in FSP_STRATEGIES:
            raise GameError(f"unknown FSP strategy {self.fsp!r}; expected one of {FSP_STRATEGIES}")

    @property
    def label(self) -> str:
        return f"{self.dso_aca}/{self.fsp}"

    @classmethod
    def parse(cls, text: str) -> "StrategyPair":
        try:
            dso, fsp = text.split("/")
        except ValueError:
            raise GameError(f"strategy pair {text!r} must look like 'anticipation/gaming'") from None
        return cls(dso.strip(), fsp.strip())


@dataclass
class GameInputs:
    net: NetworkModel
    envs: dict[int, FleetEnvelope]
    cfg: GameConfig


@dataclass
class GameOutcome:
    pair: StrategyPair
    scenario_id: int
    z: np.ndarray | None
    baseline: np.ndarray | None
    f_ul_expected: float = math.nan
    f_ml_expected: float = math.nan
    f_ll_expected: float = math.nan
    dso_realized: float = math.nan
    fsp_realized: float = math.nan
    shed_mwh: float = math.nan
    nodes_explored: int = 0
    gap_limited: bool = False  # activation search stopped at its node limit; z is the best plan found
    status: str = OPTIMAL
    stage: str = ""  # stage of the first failure, empty when all stages solved
    e_rc_expected: np.ndarray | None = None
    e_rc_realized: np.ndarray | None = None
    trace: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.status == OPTIMAL

    def row(self) -> list:
        vals = [getattr(self, q) for q in QUANTITIES]
        return [self.pair.label, self.scenario_id, *vals, self.nodes_explored, self.shed_mwh]


@dataclass
class _Stage1:
    status: str
    z: np.ndarray | None
    nodes: int = 0
    gap_limited: bool = False
    gaming: object = None  # BaselineResult of the optimal plan, anticipation only
    trace: list[str] = field(default_factory=list)


def _stage1(dso: str, scen: Scenario, inputs: GameInputs, trace: bool) -> _Stage1:
    cfg = inputs.cfg
    shape = (len(cfg.fsp_nodes), scen.horizon)
    if dso == "none":
        return _Stage1(OPTIMAL, np.zeros(shape))
    if dso == "no_anticipation":
        status, z, _ = solve_no_anticipation(inputs.net, inputs.envs, cfg, scen)
        return _Stage1(status, z)
    sol = solve_trilevel(inputs.net, inputs.envs, cfg, scen, trace=trace)
    if sol.z_star is None:
        return _Stage1(sol.status, None, sol.nodes_explored, trace=sol.trace)
    res = BaselineResult(OPTIMAL, sol.baseline_star, sol.f_ml, sol.f_ul,
                         sol.plan_star.e_rc if sol.plan_star is not None else None)
    return _Stage1(OPTIMAL, sol.z_star, sol.nodes_explored, sol.status == GAP_LIMIT, res, sol.trace)


def play_game(pair: StrategyPair, scen: Scenario, truth: Scenario, inputs: GameInputs,
              trace: bool = False, stage1: dict | None = None) -> GameOutcome:
    """Activations, then the FSP's baseline, then redispatch against ``truth``.

    ``stage1`` is an optional cache keyed by DSO strategy so pairs sharing a
    DSO strategy on the same scenario solve its activation problem once.
    """
    if scen.horizon != truth.horizon or scen.inflexible.shape != truth.inflexible.shape:
        raise ScenarioError("planning and truth scenarios differ in dimensions")
    net, envs, cfg = inputs.net, inputs.envs, inputs.cfg
    out = GameOutcome(pair, scen.id, None, None)

    # stage 1
    if stage1 is not None and pair.dso_aca in stage1:
        s1 = stage1[pair.dso_aca]
    else:
        s1 = _stage1(pair.dso_aca, scen, inputs, trace)
        if stage1 is not None:
            stage1[pair.dso_aca] = s1
    out.nodes_explored = s1.nodes
    out.gap_limited = s1.gap_limited
    out.trace = list(s1.trace)
    if s1.z is None:
        out.status, out.stage = s1.status, "activation"
        return out
    z = out.z = s1.z

    # stage 2
    if pair.fsp == "no_gaming":
        base = solve_no_gaming(envs, cfg, z, scen)
        if base.baseline is None:
            out.status, out.stage = base.status, "baseline"
            return out
        plan = redispatch(net, envs, cfg, z, base.baseline, scen)
        if plan.plan is None:
            out.status, out.stage = plan.status, "baseline"
            return out
        out.baseline = base.baseline
        out.f_ul_expected = out.f_ll_expected = plan.dso_cost
        out.f_ml_expected = plan.fsp_cost
        out.e_rc_expected = plan.plan.e_rc
    else:
        base = s1.gaming if s1.gaming is not None else solve_gaming(net, envs, cfg, z, scen)
        if base.baseline is None:
            out.status, out.stage = base.status, "baseline"
            return out
        out.baseline = base.baseline
        out.f_ul_expected = out.f_ll_expected = base.f_ul
        out.f_ml_expected = base.f_ml
        out.e_rc_expected = base.e_rc

    # stage 3
    real = realized_redispatch(net, envs, cfg, z, out.baseline, truth)
    if real.plan is None:
        out.status, out.stage = real.status, "redispatch"
        return out
    out.dso_realized = real.dso_cost
    out.fsp_realized = real.fsp_cost
    out.shed_mwh = real.shed_mwh
    out.e_rc_realized = real.plan.e_rc
    return out


# -- scenario sources --------------------------------------------------------

class ScenarioSource:
    """Indexed planning scenarios and their truths.

    Prices come from ``prices`` (ingested, keyed by scenario id) or are drawn
    from ``price_model``; loads come from ``loads`` or are drawn with the
    uncertainty config.  Every pair sees the same draw for a given index.
    """

    def __init__(self, net: NetworkModel, ucfg: UncertaintyConfig, price_model: PriceModel | None = None,
                 prices: dict | None = None, loads: dict | None = None, truth: Scenario | None = None):
        if price_model is None and not prices:
            raise ScenarioError("need a price model or ingested price scenarios")
        self.net, self.ucfg, self.price_model = net, ucfg, price_model
        self.price_ids = sorted(prices) if prices else None
        self.prices, self.loads, self.truth_day = prices, loads, truth

    @property
    def limit(self) -> int | None:
        """Number of available scenarios, None when drawn on demand."""
        if self.price_ids is not None:
            return len(self.price_ids)
        return None

    def scenario(self, i: int) -> Scenario:
        if self.price_ids is not None:
            sid = self.price_ids[i]
            prices = self.prices[sid]
        else:
            sid = i
            prices = price_scenario(self.price_model, self.ucfg.seed, i)
        if self.loads is not None:
            if sid not in self.loads:
                raise ScenarioError(f"no load scenario with id {sid}")
            loads = self.loads[sid]
        else:
            loads = load_scenario(self.net, self.ucfg.sigma, self.ucfg.seed, i)
        return assemble(sid, prices, loads)

    def truth(self, i: int, scen: Scenario, policy: str) -> Scenario:
        if policy == "same":
            return scen
        if policy == "file":
            if self.truth_day is None:
                raise ScenarioError("truth policy 'file' needs a truth day")
            return self.truth_day
        if policy == "fresh":
            if self.price_model is None:
                raise ScenarioError("truth policy 'fresh' needs a price model")
            prices = price_scenario(self.price_model, self.ucfg.seed, i, truth=True)
            loads = load_scenario(self.net, self.ucfg.sigma, self.ucfg.seed, i, stream=TRUTH_STREAM)
            return assemble(scen.id, prices, loads)
        raise GameError(f"unknown truth policy {policy!r}; expected one of {TRUTH_POLICIES}")


def _play_index(i: int, pairs, inputs: GameInputs, source: ScenarioSource, policy: str,
                trace: bool) -> list[GameOutcome]:
    scen = source.scenario(i)
    truth = source.truth(i, scen, policy)
    cache: dict = {}
    outs = []
    for pair in pairs:
        try:
            outs.append(play_game(pair, scen, truth, inputs, trace=trace, stage1=cache))
        except Exception as exc:  # a failed scenario must not abort the study
            log.warning("scenario %d, %s: %s", scen.id, pair.label, exc)
            outs.append(GameOutcome(pair, scen.id, None, None, status="error", stage=str(exc)))
    return outs


# -- summary -----------------------------------------------------------------

@dataclass
class McSummary:
    pair: StrategyPair
    n: int
    failures: int
    gap_limited: int
    means: dict[str, float]
    variances: dict[str, float]
    histograms: dict[str, list[int]]
    outside: dict[str, tuple[int, int]]  # values below / above the fixed edges
    stopped: bool
    flagged: bool  # n_max or the scenario supply was exhausted before the rule stopped
    edges: dict[str, np.ndarray] = field(default_factory=dict)  # shared by all pairs
    trace: list[dict] = field(default_factory=list)


def _values(outs: list[GameOutcome], q: str) -> np.ndarray:
    return np.array([getattr(o, q) for o in outs if o.ok], dtype=float)


def _edges(outs: list[GameOutcome], bins: int) -> dict[str, np.ndarray]:
    edges = {}
    for q in QUANTITIES:
        v = _values(outs, q)
        lo, hi = (float(v.min()), float(v.max())) if len(v) else (0.0, 1.0)
        if hi <= lo:
            lo, hi = lo - 0.5, hi + 0.5
        edges[q] = np.linspace(lo, hi, bins + 1)
    return edges


def _summarize(pair: StrategyPair, outs: list[GameOutcome], edges, stopped: bool, flagged: bool,
               trace: list[dict]) -> McSummary:
    means, variances, hist, outside = {}, {}, {}, {}
    for q in QUANTITIES:
        v = _values(outs, q)
        means[q] = float(np.mean(v)) if len(v) else math.nan
        variances[q] = float(np.var(v, ddof=1)) if len(v) > 1 else math.nan
        e = edges[q]
        inside = v[(v >= e[0]) & (v <= e[-1])]
        hist[q] = np.histogram(inside, bins=e)[0].astype(int).tolist()
        outside[q] = (int(np.sum(v < e[0])), int(np.sum(v > e[-1])))
    failures = sum(not o.ok for o in outs)
    return McSummary(pair, len(outs), failures, sum(o.gap_limited for o in outs), means, variances, hist, outside, stopped, flagged,
                     edges, trace)


def run_monte_carlo(pairs, inputs: GameInputs, ucfg: UncertaintyConfig, source: ScenarioSource,
                    truth_policy: str = "same", batch_size: int = 50, jobs: int = 1, bins: int = 50,
                    trace_bnb: bool = False):
    """Play every pair on scenarios 0, 1, ... until the stopping rule holds.

    After the pilot of ``n_min`` scenarios the histogram edges are fixed;
    then batches of ``batch_size`` follow, each ending no later than the
    sample size at which the rule can first stop.  The rule must hold for
    the three expected-cost streams of every pair.  Returns the summaries
    keyed by pair label and all outcomes ordered by (pair, scenario index).
    """
    pairs = list(pairs)
    if not pairs:
        raise GameError("no strategy pairs configured")
    if truth_policy not in TRUTH_POLICIES:
        raise GameError(f"unknown truth policy {truth_policy!r}")
    if batch_size < 1:
        raise GameError("batch size must be positive")
    n_cap = ucfg.n_max if source.limit is None else min(ucfg.n_max, source.limit)
    threshold = stop_threshold(ucfg.alpha, ucfg.delta_frac)
    results: dict[int, list[GameOutcome]] = {}
    trace: dict[str, list[dict]] = {p.label: [] for p in pairs}
    edges = None
    n, stopped = 0, False
    while n < n_cap:
        end = ucfg.n_min if n == 0 else n + batch_size
        if n < threshold:
            end = min(end, threshold)
        end = min(end, n_cap)
        for i, outs in zip(range(n, end), _run_batch(range(n, end), pairs, inputs, source,
                                                     truth_policy, jobs, trace_bnb)):
            results[i] = outs
        n = end
        by_pair = _by_pair(results, pairs)
        if edges is None:
            edges = _edges([o for outs in by_pair.values() for o in outs], bins)
        if n < ucfg.n_min:
            continue
        stopped = True
        for p in pairs:
            entry = {"n": n}
            for q in STREAMS:
                entry[q] = stopping_check(_values(by_pair[p.label], q), ucfg.alpha, ucfg.delta_frac)
                stopped &= entry[q] == "stop"
            trace[p.label].append(entry)
        if stopped:
            break
    if not results:
        raise ScenarioError("no scenarios available")
    by_pair = _by_pair(results, pairs)
    summaries = {p.label: _summarize(p, by_pair[p.label], edges, stopped, not stopped, trace[p.label])
                 for p in pairs}
    ordered = [o for p in pairs for o in by_pair[p.label]]
    return summaries, ordered


def _by_pair(results: dict[int, list[GameOutcome]], pairs) -> dict[str, list[GameOutcome]]:
    out: dict[str, list[GameOutcome]] = {p.label: [] for p in pairs}
    for i in sorted(results):
        for o in results[i]:
            out[o.pair.label].append(o)
    return out


def _run_batch(indices, pairs, inputs, source, policy, jobs, trace) -> list[list[GameOutcome]]:
    indices = list(indices)
    if jobs == 1 or len(indices) < 2:
        return [_play_index(i, pairs, inputs, source, policy, trace) for i in indices]
    from joblib import Parallel, delayed
    return Parallel(n_jobs=jobs)(delayed(_play_index)(i, pairs, inputs, source, policy, trace)
                                 for i in indices)


# -- persistence -------------------------------------------------------------

def _num(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    return "" if math.isnan(v) else repr(v)


def _json_safe(obj):
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {str(k): _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _json_safe(obj.tolist())
    if isinstance(obj, np.generic):
        return _json_safe(obj.item())
    return obj


def summary_dict(s: McSummary) -> dict:
    return {"pair": s.pair.label, "n": s.n, "failures": s.failures, "gap_limited": s.gap_limited,
            "stopped": s.stopped,
            "flagged": s.flagged, "means": s.means, "variances": s.variances,
            "histograms": s.histograms, "bin_edges": s.edges,
            "outside": {k: list(v) for k, v in s.outside.items()}, "stopping_trace": s.trace}


def write_results(outdir, outcomes: list[GameOutcome], summaries: dict[str, McSummary],
                  manifest: dict) -> dict[str, Path]:
    """``results.csv``, ``summary.json`` and ``manifest.json`` in ``outdir``."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    paths = {"results": outdir / "results.csv", "summary": outdir / "summary.json",
             "manifest": outdir / "manifest.json"}
    with paths["results"].open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS + ("gap_limited", "status", "stage"))
        for o in outcomes:
            r = o.row()
            w.writerow([r[0], r[1], *(_num(v) for v in r[2:]), int(o.gap_limited), o.status, o.stage])
    body = {"pairs": [summary_dict(s) for s in summaries.values()]}
    for key, data in (("summary", body), ("manifest", manifest)):
        paths[key].write_text(json.dumps(_json_safe(data), indent=2, sort_keys=True) + "\n",
                              encoding="utf-8")
    return paths


# -- budget sweep ------------------------------------------------------------

@dataclass
class SweepRow:
    budget: int
    max_nodes: int  # candidate plans of plain enumeration
    nodes: list[int]
    f_ul_none: list[float]
    f_ul_no_anticipation: list[float]
    f_ul_anticipation: list[float]

    def _saving(self, vals) -> float:
        """Percent saving of the mean over scenarios where the strategy was solved."""
        vals = np.asarray(vals, dtype=float)
        ok = np.isfinite(vals)
        if not ok.any():
            return math.nan
        base = float(np.mean(np.asarray(self.f_ul_none, dtype=float)[ok]))
        if base == 0.0:
            return 0.0
        return 100.0 * (1.0 - float(np.mean(vals[ok])) / base)

    @property
    def saving_no_anticipation(self) -> float:
        return self._saving(self.f_ul_no_anticipation)

    @property
    def saving_anticipation(self) -> float:
        return self._saving(self.f_ul_anticipation)

    @property
    def min_scenario_saving(self) -> float:
        """Smallest per-scenario saving (EUR) of anticipation over no activation."""
        d = np.asarray(self.f_ul_none) - np.asarray(self.f_ul_anticipation)
        return float(np.nanmin(d)) if len(d) else math.nan


def _sweep_index(i, budgets, inputs: GameInputs, source: ScenarioSource):
    scen = source.scenario(i)
    # plan values do not depend on the budget, so one evaluator serves the whole sweep
    ev = PlanEvaluator(inputs.net, inputs.envs, inputs.cfg, scen)
    none = ev.evaluate(np.zeros((len(inputs.cfg.fsp_nodes), scen.horizon)))
    out, prev = [], []
    for b in budgets:
        cfg = inputs.cfg.with_(b_aca=int(b))
        st, z, _ = solve_no_anticipation(inputs.net, inputs.envs, cfg, scen)
        noant = ev.evaluate(z) if z is not None else None
        sol = solve_trilevel(inputs.net, inputs.envs, cfg, scen, initial=prev, evaluator=ev)
        if sol.z_star is not None:
            prev = [sol.z_star]
        out.append((none.f_ul, noant.f_ul if noant is not None else math.nan, sol.f_ul,
                    sol.nodes_explored))
    return out


def sweep_budget(inputs: GameInputs, source: ScenarioSource, budgets, count: int,
                 jobs: int = 1) -> list[SweepRow]:
    """Explored nodes and DSO savings per ACA budget over ``count`` paired scenarios."""
    budgets = [int(b) for b in budgets]
    idx = list(range(count))
    if jobs == 1 or count < 2:
        per = [_sweep_index(i, budgets, inputs, source) for i in idx]
    else:
        from joblib import Parallel, delayed
        per = Parallel(n_jobs=jobs)(delayed(_sweep_index)(i, budgets, inputs, source) for i in idx)
    T = source.scenario(0).horizon
    rows = []
    for k, b in enumerate(budgets):
        vals = [p[k] for p in per]
        rows.append(SweepRow(b, enumerate_candidates(len(inputs.cfg.fsp_nodes), T, b),
                             [v[3] for v in vals], [v[0] for v in vals], [v[1] for v in vals],
                             [v[2] for v in vals]))
    return rows
