"""Radial distribution network and its LinDistFlow constraint emitter."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import networkx as nx
import numpy as np

from .milp import EQ, GE, LE, ModelProblem

BUS_CLASSES = ("load", "wind", "solar")


class NetworkError(ValueError):
    pass


@dataclass(frozen=True)
class Bus:
    id: int
    inflexible_profile: np.ndarray  # MW, positive = consumption
    reactive_factor: float = 0.0
    is_fsp_node: bool = False
    is_slack: bool = False
    kind: str | None = None


@dataclass(frozen=True)
class Branch:
    frm: int
    to: int
    resistance: float
    reactance: float
    s_max: float


@dataclass(frozen=True)
class PolygonCut:
    k: int
    a: float
    b: float
    sense: str  # "upper" or "lower"


@dataclass(frozen=True)
class NetworkModel:
    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    v_min_sq: float = 0.81
    v_max_sq: float = 1.21
    base_mva: float = 1.0
    _pos: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        if not self._pos:
            self._pos.update({b.id: i for i, b in enumerate(self.buses)})

    @property
    def horizon(self) -> int:
        return len(self.buses[0].inflexible_profile)

    @property
    def slack(self) -> Bus:
        return next(b for b in self.buses if b.is_slack)

    @property
    def bus_ids(self) -> list[int]:
        return [b.id for b in self.buses]

    @property
    def fsp_nodes(self) -> list[int]:
        return [b.id for b in self.buses if b.is_fsp_node]

    def bus(self, bus_id: int) -> Bus:
        return self.buses[self._pos[bus_id]]

    def position(self, bus_id: int) -> int:
        return self._pos[bus_id]

    def forecast(self) -> np.ndarray:
        """Inflexible forecast as a (bus, step) array in MW."""
        return np.vstack([b.inflexible_profile for b in self.buses])

    def path_to(self, bus_id: int) -> list[Branch]:
        """Branches on the unique slack-to-bus path, in order from the slack."""
        parent = {br.to: br for br in self.branches}
        path = []
        node = bus_id
        while node != self.slack.id:
            br = parent[node]
            path.append(br)
            node = br.frm
        return path[::-1]

    def with_s_max_scaled(self, factor: float) -> "NetworkModel":
        branches = tuple(Branch(b.frm, b.to, b.resistance, b.reactance, b.s_max * factor)
                         for b in self.branches)
        return NetworkModel(self.buses, branches, self.v_min_sq, self.v_max_sq, self.base_mva)

    def truncated(self, horizon: int) -> "NetworkModel":
        """The same network with load profiles cut to their first ``horizon`` steps."""
        if not 0 < horizon <= self.horizon:
            raise NetworkError(f"cannot cut {self.horizon} profile steps to {horizon}")
        buses = tuple(replace(b, inflexible_profile=b.inflexible_profile[:horizon].copy())
                      for b in self.buses)
        return NetworkModel(buses, self.branches, self.v_min_sq, self.v_max_sq, self.base_mva)


def build_network(buses, branches, v_min_pu=0.9, v_max_pu=1.1, base_mva=1.0) -> NetworkModel:
    """Validate topology and orient every branch parent -> child from the slack."""
    buses = list(buses)
    slack = [b for b in buses if b.is_slack]
    if len(slack) != 1:
        raise NetworkError(f"expected exactly one slack bus, found {len(slack)}")
    ids = [b.id for b in buses]
    if len(set(ids)) != len(ids):
        raise NetworkError("duplicate bus ids")
    lengths = {len(b.inflexible_profile) for b in buses}
    if len(lengths) != 1:
        raise NetworkError("profile lengths differ between buses")
    for b in buses:
        if not math.isfinite(b.reactive_factor):
            raise NetworkError(f"bus {b.id}: reactive factor not finite")
    if not v_min_pu < v_max_pu:
        raise NetworkError("v_min must be below v_max")

    g = nx.Graph()
    g.add_nodes_from(ids)
    for br in branches:
        if br.frm not in g or br.to not in g:
            raise NetworkError(f"branch ({br.frm},{br.to}) references unknown bus")
        if br.resistance < 0 or br.reactance < 0 or br.s_max <= 0:
            raise NetworkError(f"branch ({br.frm},{br.to}): invalid impedance or rating")
        if g.has_edge(br.frm, br.to):
            raise NetworkError(f"parallel branch ({br.frm},{br.to}): topology is not a tree")
        g.add_edge(br.frm, br.to, branch=br)
    if len(branches) != len(buses) - 1 or not nx.is_connected(g):
        if not nx.is_forest(g):
            raise NetworkError("branch set contains a cycle; network must be radial")
        raise NetworkError("network is disconnected")

    oriented = []
    for parent, child in nx.bfs_edges(g, slack[0].id):
        br = g.edges[parent, child]["branch"]
        oriented.append(Branch(parent, child, br.resistance, br.reactance, br.s_max))
    return NetworkModel(tuple(buses), tuple(oriented), v_min_pu ** 2, v_max_pu ** 2, float(base_mva))


def load_network(path) -> NetworkModel:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise NetworkError(f"{path}: invalid JSON ({exc})") from exc
    try:
        buses = [
            Bus(id=int(b["id"]),
                inflexible_profile=np.asarray(b["profile_mw"], dtype=float),
                reactive_factor=float(b.get("reactive_factor", 0.0)),
                is_fsp_node=bool(b.get("is_fsp", False)),
                is_slack=bool(b.get("is_slack", False)),
                kind=b.get("class"))
            for b in data["buses"]
        ]
        branches = [Branch(int(b["from"]), int(b["to"]), float(b["r_pu"]), float(b["x_pu"]),
                           float(b["s_max_pu"]))
                    for b in data["branches"]]
        return build_network(buses, branches, float(data.get("v_min_pu", 0.9)),
                             float(data.get("v_max_pu", 1.1)), float(data.get("base_mva", 1.0)))
    except (KeyError, TypeError) as exc:
        raise NetworkError(f"{path}: missing or malformed field {exc}") from exc


def network_to_dict(net: NetworkModel) -> dict:
    return {
        "base_mva": net.base_mva,
        "v_min_pu": math.sqrt(net.v_min_sq),
        "v_max_pu": math.sqrt(net.v_max_sq),
        "buses": [{"id": b.id, "is_slack": b.is_slack, "is_fsp": b.is_fsp_node,
                   "reactive_factor": b.reactive_factor, "class": b.kind,
                   "profile_mw": [float(v) for v in b.inflexible_profile]} for b in net.buses],
        "branches": [{"from": b.frm, "to": b.to, "r_pu": b.resistance, "x_pu": b.reactance,
                      "s_max_pu": b.s_max} for b in net.branches],
    }


def polygon_coefficients(K: int = 8) -> list[PolygonCut]:
    """Chords of the unit circle between angles k*dtheta and (k+1)*dtheta.

    Cut k reads ``Q <= a_k P + b_k S`` for k < K/2 and ``Q >= a_k P + b_k S``
    otherwise.
    """
    if K < 4 or K % 2:
        raise ValueError(f"K must be an even integer >= 4, got {K}")
    dtheta = 2 * math.pi / K
    cuts = []
    for k in range(K):
        mid = (k + 0.5) * dtheta
        a = -math.cos(mid) / math.sin(mid)
        b = math.cos(0.5 * dtheta) / math.sin(mid)
        cuts.append(PolygonCut(k, a, b, "upper" if k < K // 2 else "lower"))
    return cuts


@dataclass
class FlowVars:
    """Column indices of flow and squared-voltage variables."""
    P: np.ndarray  # (branch, step)
    Q: np.ndarray  # (branch, step)
    V: np.ndarray  # (bus, step)


def add_flow_vars(problem: ModelProblem, net: NetworkModel, horizon: int) -> FlowVars:
    nb, nn = len(net.branches), len(net.buses)
    P = np.empty((nb, horizon), dtype=np.int64)
    Q = np.empty((nb, horizon), dtype=np.int64)
    V = np.empty((nn, horizon), dtype=np.int64)
    inf = math.inf
    for i, br in enumerate(net.branches):
        for t in range(horizon):
            P[i, t] = problem.add_var(f"P[{br.frm}-{br.to},{t}]", -inf, inf)
            Q[i, t] = problem.add_var(f"Q[{br.frm}-{br.to},{t}]", -inf, inf)
    for i, bus in enumerate(net.buses):
        for t in range(horizon):
            V[i, t] = problem.add_var(f"v[{bus.id},{t}]", -inf, inf)
    return FlowVars(P, Q, V)


@dataclass
class FlowRows:
    p_balance: list[int] = field(default_factory=list)
    q_balance: list[int] = field(default_factory=list)
    v_drop: list[int] = field(default_factory=list)
    v_slack: list[int] = field(default_factory=list)
    v_bounds: list[int] = field(default_factory=list)
    cuts: list[int] = field(default_factory=list)


def emit_lindistflow(problem: ModelProblem, net: NetworkModel, p: np.ndarray, q: np.ndarray,
                     flows: FlowVars, cuts: list[PolygonCut], prefix: str = "",
                     cut_relax: np.ndarray | None = None) -> FlowRows:
    """Add balance, voltage-drop, voltage-bound and polygonal flow-limit rows.

    ``p`` and ``q`` hold the columns of the per-unit net consumption at every
    bus (rows for the slack are ignored).  ``cut_relax`` optionally holds
    nonnegative per-unit columns (branch, step) widening each polygon radius.
    """
    horizon = flows.P.shape[1]
    if p.shape != (len(net.buses), horizon) or q.shape != p.shape:
        raise ValueError(f"injection arrays {p.shape} do not match network "
                         f"({len(net.buses)} buses, {horizon} steps)")
    if flows.P.shape[0] != len(net.branches) or flows.V.shape != p.shape:
        raise ValueError("flow variable arrays do not match the network")
    out = FlowRows()
    inflow = {b.id: [] for b in net.buses}
    outflow = {b.id: [] for b in net.buses}
    for i, br in enumerate(net.branches):
        inflow[br.to].append(i)
        outflow[br.frm].append(i)
    slack = net.slack.id
    for n, bus in enumerate(net.buses):
        if bus.is_slack:
            continue
        for t in range(horizon):
            for var, fam, dest in ((flows.P, "P_balance", out.p_balance),
                                   (flows.Q, "Q_balance", out.q_balance)):
                terms = [(int(var[i, t]), 1.0) for i in inflow[bus.id]]
                terms += [(int(var[i, t]), -1.0) for i in outflow[bus.id]]
                terms.append((int((p if fam == "P_balance" else q)[n, t]), -1.0))
                dest.append(problem.add_row(terms, EQ, 0.0, prefix + fam, (bus.id, t)))
    for i, br in enumerate(net.branches):
        m, n = net.position(br.frm), net.position(br.to)
        for t in range(horizon):
            # v_n = v_m - 2 (R P + X Q), P flowing parent -> child
            terms = [(int(flows.V[n, t]), 1.0), (int(flows.V[m, t]), -1.0),
                     (int(flows.P[i, t]), 2 * br.resistance), (int(flows.Q[i, t]), 2 * br.reactance)]
            out.v_drop.append(problem.add_row(terms, EQ, 0.0, prefix + "v_drop", (br.frm, br.to, t)))
    s = net.position(slack)
    for t in range(horizon):
        out.v_slack.append(problem.add_row([(int(flows.V[s, t]), 1.0)], EQ, 1.0,
                                           prefix + "v_slack", (slack, t)))
    for n, bus in enumerate(net.buses):
        if bus.is_slack:
            continue
        for t in range(horizon):
            col = int(flows.V[n, t])
            out.v_bounds.append(problem.add_row([(col, 1.0)], GE, net.v_min_sq, prefix + "v_lo", (bus.id, t)))
            out.v_bounds.append(problem.add_row([(col, 1.0)], LE, net.v_max_sq, prefix + "v_up", (bus.id, t)))
    for i, br in enumerate(net.branches):
        for t in range(horizon):
            for cut in cuts:
                terms = [(int(flows.Q[i, t]), 1.0), (int(flows.P[i, t]), -cut.a)]
                if cut_relax is not None:
                    terms.append((int(cut_relax[i, t]), -cut.b))
                sense = LE if cut.sense == "upper" else GE
                fam = "cut_up" if cut.sense == "upper" else "cut_lo"
                out.cuts.append(problem.add_row(terms, sense, cut.b * br.s_max, prefix + fam,
                                                (br.frm, br.to, t, cut.k)))
    return out
