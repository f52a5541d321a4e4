import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from acagame.network import Branch, Bus, build_network
from acagame.scenario import (PriceModel, Scenario, ScenarioError, UncertaintyConfig, assemble,
                              load_price_scenarios, load_scenario, price_scenario, read_load_scenarios,
                              stop_threshold, stopping_check, write_load_scenarios, write_price_scenarios)


def _net(kinds=("load", "solar", "wind"), T=5):
    buses = [Bus(0, np.zeros(T), 0.0, False, True, "load")]
    buses += [Bus(i + 1, np.full(T, 1.0 if k == "load" else -1.0), 0.0, False, False, k)
              for i, k in enumerate(kinds)]
    return build_network(buses, [Branch(0, i + 1, 0.1, 0.1, 1.0) for i in range(len(kinds))])


def test_zero_sigma_reproduces_forecast():
    net = _net()
    assert np.array_equal(load_scenario(net, 0.0, 1, 0), net.forecast())


def test_load_draws_keyed_by_index_and_seed():
    net = _net()
    a = load_scenario(net, 0.1, 3, 7)
    assert np.array_equal(a, load_scenario(net, 0.1, 3, 7))
    assert not np.array_equal(a, load_scenario(net, 0.1, 3, 8))
    assert not np.array_equal(a, load_scenario(net, 0.1, 4, 7))


def test_error_processes():
    net = _net(T=6)
    p = load_scenario(net, 0.5, 2, 0)
    f = net.forecast()
    eps = p / np.where(f == 0, 1, f) - 1
    # random walks start at zero error; solar errors do not
    assert eps[3, 0] == 0.0  # wind
    assert eps[2, 0] != 0.0  # solar
    assert np.all(p[1] >= 0.0)  # pure load never turns into generation


def test_untagged_bus_rejected():
    buses = [Bus(0, np.zeros(2), 0.0, False, True, "load"), Bus(1, np.ones(2), 0.0, False, False, None)]
    net = build_network(buses, [Branch(0, 1, 0.1, 0.1, 1.0)])
    with pytest.raises(ScenarioError):
        load_scenario(net, 0.1, 1, 0)


def test_spread_lognormal_moments():
    model = PriceModel((50.0,) * 24, 2.0, 20.0, 5.0)
    spreads = np.concatenate([price_scenario(model, 1, i)[1] for i in range(4000)])
    assert spreads.min() >= 0
    assert spreads.mean() == pytest.approx(20.0, rel=0.02)
    assert spreads.std() == pytest.approx(5.0, rel=0.05)


def test_truth_streams_independent():
    model = PriceModel((50.0,) * 4, 2.0, 20.0, 5.0)
    plan, truth = price_scenario(model, 1, 0), price_scenario(model, 1, 0, truth=True)
    assert not np.array_equal(plan[1], truth[1])


def test_csv_round_trips(tmp_path):
    net = _net(T=3)
    blocks = {0: price_scenario(PriceModel((40.0, 50.0, 60.0), 1.0, 20.0, 4.0), 1, 0),
              5: price_scenario(PriceModel((40.0, 50.0, 60.0), 1.0, 20.0, 4.0), 1, 5)}
    write_price_scenarios(tmp_path / "p.csv", blocks)
    back = load_price_scenarios(tmp_path / "p.csv", 3)
    assert sorted(back) == [0, 5]
    for k in blocks:
        assert np.array_equal(back[k][0], blocks[k][0]) and np.array_equal(back[k][1], blocks[k][1])
    loads = {2: load_scenario(net, 0.1, 1, 2)}
    write_load_scenarios(tmp_path / "l.csv", net, loads)
    assert np.array_equal(read_load_scenarios(tmp_path / "l.csv", net, 3)[2], loads[2])


@pytest.mark.parametrize("body", [
    "scenario_id,step,da_price_eur_mwh,rc_spread_eur_mwh\n0,0,50,-1\n0,1,50,1\n",
    "scenario_id,step,da_price_eur_mwh,rc_spread_eur_mwh\n0,0,50,1\n",
    "scenario_id,step,da_price_eur_mwh,rc_spread_eur_mwh\n0,0,50,1\n0,9,50,1\n",
    "id,step\n0,0\n",
])
def test_bad_price_files(tmp_path, body):
    path = tmp_path / "p.csv"
    path.write_text(body)
    with pytest.raises(ScenarioError):
        load_price_scenarios(path, 2)


def test_scenario_validation():
    with pytest.raises(ScenarioError):
        Scenario(0, np.zeros(2), np.array([1.0, -1.0]), np.zeros((1, 2)))
    with pytest.raises(ScenarioError):
        assemble(0, (np.zeros(3), np.zeros(3)), np.zeros((1, 2)))
    with pytest.raises(ScenarioError):
        UncertaintyConfig(n_min=1)


def test_stopping_threshold_closed_form():
    # (z_{0.975} / 0.05)^2 = 1536.58...
    assert stop_threshold(0.05, 0.05) == 1537
    assert stop_threshold(0.05, 0.05) == math.ceil((1.959963984540054 / 0.05) ** 2)


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 3000), st.floats(0.1, 100.0))
def test_stopping_rule_depends_only_on_sample_size(n, scale):
    x = np.zeros(n)
    x[0] = scale
    expected = "stop" if n >= 1537 else "continue"
    assert stopping_check(x) == expected


def test_stopping_degenerate_samples():
    assert stopping_check([1.0]) == "continue"
    assert stopping_check([2.0, 2.0, 2.0]) == "stop"
