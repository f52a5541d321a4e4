import json

import numpy as np
import pytest

from acagame.game import (CSV_COLUMNS, GameError, GameInputs, ScenarioSource, StrategyPair, play_game,
                          run_monte_carlo, sweep_budget, write_results)
from acagame.instances import desk_instance
from acagame.scenario import PriceModel, ScenarioError, UncertaintyConfig

ALL_PAIRS = [StrategyPair.parse(s) for s in
             ("none/no_gaming", "none/gaming", "no_anticipation/gaming", "anticipation/gaming")]


@pytest.fixture(scope="module")
def small():
    inst = desk_instance(0, horizon=6, b_aca=1)
    inputs = GameInputs(inst.net, inst.envs, inst.cfg)
    model = PriceModel(tuple(inst.scen.da_price), 3.0, 25.0, 8.0)
    return inst, inputs, model


def _source(inst, model, sigma=0.05, n_max=6):
    ucfg = UncertaintyConfig(sigma=sigma, seed=3, n_min=2, n_max=n_max)
    return ucfg, ScenarioSource(inst.net, ucfg, model)


def test_pair_parsing():
    assert StrategyPair.parse("anticipation/gaming").label == "anticipation/gaming"
    for bad in ("anticipation", "foo/gaming", "none/cheat"):
        with pytest.raises(GameError):
            StrategyPair.parse(bad)


def test_same_truth_realizes_expectation(small):
    inst, inputs, model = small
    _, src = _source(inst, model)
    scen = src.scenario(0)
    cache = {}
    for pair in ALL_PAIRS:
        out = play_game(pair, scen, scen, inputs, stage1=cache)
        assert out.ok, out.stage
        assert out.dso_realized == pytest.approx(out.f_ul_expected, rel=1e-6, abs=1e-6)
        assert out.fsp_realized == pytest.approx(out.f_ml_expected, rel=1e-6, abs=1e-6)
        assert out.f_ll_expected == out.f_ul_expected


def test_strategy_ordering_on_one_scenario(small):
    inst, inputs, model = small
    _, src = _source(inst, model)
    scen = src.scenario(1)
    cache = {}
    out = {p.label: play_game(p, scen, scen, inputs, stage1=cache) for p in ALL_PAIRS}
    tol = 1e-5 * max(1.0, abs(out["none/gaming"].f_ul_expected))
    assert out["none/gaming"].f_ml_expected <= out["none/no_gaming"].f_ml_expected + 1e-5 * max(
        1.0, abs(out["none/no_gaming"].f_ml_expected))
    assert out["anticipation/gaming"].f_ul_expected <= out["no_anticipation/gaming"].f_ul_expected + tol
    assert out["anticipation/gaming"].f_ul_expected <= out["none/gaming"].f_ul_expected + tol


def test_fresh_truth_differs(small):
    inst, inputs, model = small
    _, src = _source(inst, model)
    scen = src.scenario(0)
    truth = src.truth(0, scen, "fresh")
    assert truth.id == scen.id
    assert not np.array_equal(truth.rc_spread, scen.rc_spread)
    with pytest.raises(ScenarioError):
        src.truth(0, scen, "file")


def test_zero_uncertainty_stops_after_pilot(small):
    inst, inputs, _ = small
    flat = PriceModel(tuple(inst.scen.da_price), 0.0, 25.0, 0.0)
    ucfg, src = _source(inst, flat, sigma=0.0)
    summaries, outcomes = run_monte_carlo(ALL_PAIRS[:2], inputs, ucfg, src)
    for s in summaries.values():
        assert s.n == 2 and s.stopped and not s.flagged
    assert len(outcomes) == 4


def test_parallel_equals_sequential(small, tmp_path):
    inst, inputs, model = small
    ucfg, src = _source(inst, model, n_max=4)
    runs = []
    for jobs, d in ((1, tmp_path / "a"), (2, tmp_path / "b")):
        summaries, outcomes = run_monte_carlo(ALL_PAIRS, inputs, ucfg, src, batch_size=2, jobs=jobs)
        paths = write_results(d, outcomes, summaries, {"seed": 3})
        runs.append({k: p.read_bytes() for k, p in paths.items()})
    assert runs[0] == runs[1]
    header = runs[0]["results"].decode().splitlines()[0].split(",")
    assert tuple(header[: len(CSV_COLUMNS)]) == CSV_COLUMNS
    summary = json.loads(runs[0]["summary"])
    assert summary["pairs"][0]["flagged"] is True  # n_max reached before the rule


def test_stop_batch_never_overshoots_threshold(small):
    inst, inputs, model = small
    ucfg, src = _source(inst, model, n_max=3)
    summaries, _ = run_monte_carlo(ALL_PAIRS[:1], inputs, ucfg, src, batch_size=50)
    assert summaries["none/no_gaming"].n == 3


def test_budget_sweep(small):
    inst, inputs, model = small
    _, src = _source(inst, model)
    rows = sweep_budget(inputs, src, [0, 1, 2], 2)
    assert [r.budget for r in rows] == [0, 1, 2]
    assert rows[0].max_nodes == 2
    for r in rows:
        assert len(r.nodes) == 2
        for none, ant in zip(r.f_ul_none, r.f_ul_anticipation):
            assert ant <= none + 1e-5 * max(1.0, abs(none))
    for lo, hi in zip(rows, rows[1:]):
        for a, b in zip(lo.f_ul_anticipation, hi.f_ul_anticipation):
            assert b <= a + 1e-5 * max(1.0, abs(a))


def test_errors():
    inst = desk_instance(0, horizon=6)
    inputs = GameInputs(inst.net, inst.envs, inst.cfg)
    ucfg = UncertaintyConfig()
    with pytest.raises(ScenarioError):
        ScenarioSource(inst.net, ucfg)
    src = ScenarioSource(inst.net, ucfg, PriceModel(tuple(inst.scen.da_price)))
    with pytest.raises(GameError):
        run_monte_carlo([], inputs, ucfg, src)
    with pytest.raises(GameError):
        run_monte_carlo(ALL_PAIRS, inputs, ucfg, src, truth_policy="later")
