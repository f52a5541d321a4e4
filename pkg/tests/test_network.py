import math
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from acagame.milp import ModelProblem, solve_lp
from acagame.network import (Branch, Bus, NetworkError, add_flow_vars, build_network, emit_lindistflow,
                             load_network, network_to_dict, polygon_coefficients)


def _bus(i, T=2, slack=False, load=0.0, qf=0.0):
    return Bus(i, np.full(T, load), qf, False, slack, "load")


def test_square_polygon_is_the_unit_diamond():
    cuts = polygon_coefficients(4)
    # chords between the axis points of the circle: |P| + |Q| <= 1
    assert [c.sense for c in cuts] == ["upper", "upper", "lower", "lower"]
    assert cuts[0].a == pytest.approx(-1.0) and cuts[0].b == pytest.approx(1.0)
    assert cuts[1].a == pytest.approx(1.0) and cuts[1].b == pytest.approx(1.0)


@pytest.mark.parametrize("K", [4, 6, 8, 16, 32])
def test_chord_endpoints_lie_on_the_circle(K):
    dtheta = 2 * math.pi / K
    for c in polygon_coefficients(K):
        for ang in (c.k * dtheta, (c.k + 1) * dtheta):
            P, Q = math.cos(ang), math.sin(ang)
            assert Q == pytest.approx(c.a * P + c.b, abs=1e-12)


@pytest.mark.parametrize("K", [0, 3, 5, -2])
def test_bad_polygon_order_rejected(K):
    with pytest.raises(ValueError):
        polygon_coefficients(K)


@settings(max_examples=200, deadline=None)
@given(st.floats(0, 2 * math.pi), st.sampled_from([4, 8, 16]))
def test_polygon_contains_inscribed_circle(theta, K):
    # every point at radius cos(dtheta/2) satisfies all cuts
    r = math.cos(math.pi / K) - 1e-12
    P, Q = r * math.cos(theta), r * math.sin(theta)
    for c in polygon_coefficients(K):
        rhs = c.a * P + c.b
        assert (Q <= rhs + 1e-12) if c.sense == "upper" else (Q >= rhs - 1e-12)


def test_branches_oriented_away_from_slack():
    buses = [_bus(0), _bus(1), _bus(2, slack=True)]
    net = build_network(buses, [Branch(0, 1, 0.1, 0.1, 1.0), Branch(1, 2, 0.1, 0.1, 1.0)])
    assert [(b.frm, b.to) for b in net.branches] == [(2, 1), (1, 0)]
    assert [b.to for b in net.path_to(0)] == [1, 0]


@pytest.mark.parametrize("case", ["cycle", "disconnected", "two_slacks", "unknown_bus", "no_rating"])
def test_invalid_topologies(case):
    buses = [_bus(0, slack=True), _bus(1), _bus(2)]
    br = [Branch(0, 1, 0.1, 0.1, 1.0), Branch(1, 2, 0.1, 0.1, 1.0)]
    if case == "cycle":
        br.append(Branch(0, 2, 0.1, 0.1, 1.0))
    elif case == "disconnected":
        br = br[:1]
    elif case == "two_slacks":
        buses[1] = _bus(1, slack=True)
    elif case == "unknown_bus":
        br.append(Branch(2, 9, 0.1, 0.1, 1.0))
    else:
        br[0] = Branch(0, 1, 0.1, 0.1, 0.0)
    with pytest.raises(NetworkError):
        build_network(buses, br)


def test_json_round_trip(tmp_path):
    buses = [_bus(0, slack=True), _bus(1, load=2.0, qf=0.3)]
    net = build_network(buses, [Branch(0, 1, 0.02, 0.04, 1.5)], base_mva=10.0)
    path = tmp_path / "net.json"
    path.write_text(json.dumps(network_to_dict(net)))
    back = load_network(path)
    assert back.base_mva == 10.0
    assert back.branches == net.branches
    assert np.array_equal(back.forecast(), net.forecast())


def test_truncated_keeps_first_steps():
    net = build_network([_bus(0, 4, slack=True), Bus(1, np.arange(4.0), 0.0, False, False, "load")],
                        [Branch(0, 1, 0.1, 0.1, 1.0)])
    short = net.truncated(2)
    assert short.horizon == 2
    assert short.forecast()[1].tolist() == [0.0, 1.0]
    with pytest.raises(NetworkError):
        net.truncated(5)


def test_lindistflow_two_branch_feeder():
    # slack 0 - 1 - 2 with loads 0.3 and 0.2 pu (P) and 0.1, 0.05 (Q)
    buses = [_bus(0, 1, slack=True), _bus(1, 1), _bus(2, 1)]
    net = build_network(buses, [Branch(0, 1, 0.01, 0.02, 5.0), Branch(1, 2, 0.03, 0.01, 5.0)])
    p = ModelProblem()
    loads = {1: (0.3, 0.1), 2: (0.2, 0.05)}
    pc = np.full((3, 1), -1)
    qc = np.full((3, 1), -1)
    for n in (1, 2):
        pc[n, 0] = p.add_var(f"p{n}", loads[n][0], loads[n][0])
        qc[n, 0] = p.add_var(f"q{n}", loads[n][1], loads[n][1])
    flows = add_flow_vars(p, net, 1)
    emit_lindistflow(p, net, pc, qc, flows, polygon_coefficients(8))
    res = solve_lp(p)
    assert res.ok
    P = res.x[flows.P[:, 0]]
    Q = res.x[flows.Q[:, 0]]
    V = res.x[flows.V[:, 0]]
    assert P == pytest.approx([0.5, 0.2])
    assert Q == pytest.approx([0.15, 0.05])
    v1 = 1.0 - 2 * (0.01 * 0.5 + 0.02 * 0.15)
    v2 = v1 - 2 * (0.03 * 0.2 + 0.01 * 0.05)
    assert V == pytest.approx([1.0, v1, v2])


def test_lindistflow_flow_limit_binds():
    buses = [_bus(0, 1, slack=True), _bus(1, 1)]
    net = build_network(buses, [Branch(0, 1, 0.0, 0.0, 1.0)])
    p = ModelProblem()
    pc = np.array([[-1], [p.add_var("p1", 0.0, 10.0)]])
    qc = np.array([[-1], [p.add_var("q1", 0.0, 0.0)]])
    flows = add_flow_vars(p, net, 1)
    emit_lindistflow(p, net, pc, qc, flows, polygon_coefficients(8))
    p.set_objective({int(pc[1, 0]): -1.0})
    res = solve_lp(p)
    # with Q = 0 the octagon reaches P = 1 (a vertex lies on the P axis)
    assert res.x[pc[1, 0]] == pytest.approx(1.0)
