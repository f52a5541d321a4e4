import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from acagame.ev_fleet import (ChargingSession, FleetError, SessionParams, aggregate_sessions,
                              check_profile, read_sessions, synth_sessions, write_sessions)


def test_single_session_envelope():
    env = aggregate_sessions([ChargingSession(2, 5, 6.0, 3.0)], 6)
    assert env.p_max.tolist() == [0, 0, 3, 3, 3, 0]
    assert env.cum_fast.tolist() == [0, 0, 3, 6, 6, 6]
    # charging as late as possible inside the window uses steps 3 and 4
    assert env.cum_slow.tolist() == [0, 0, 0, 3, 6, 6]


def test_open_end_leaves_energy_after_horizon():
    s = ChargingSession(2, 6, 6.0, 2.0)
    with pytest.raises(FleetError):
        aggregate_sessions([s], 4)
    env = aggregate_sessions([s], 4, open_end=True)
    assert env.cum_fast.tolist() == [0, 0, 2, 4]
    # the latest schedule uses steps 3, 4, 5; only step 3 falls inside
    assert env.cum_slow.tolist() == [0, 0, 0, 2]


@pytest.mark.parametrize("s", [ChargingSession(3, 3, 0.0, 1.0), ChargingSession(0, 2, 5.0, 1.0),
                               ChargingSession(0, 2, -1.0, 1.0)])
def test_invalid_sessions(s):
    with pytest.raises(FleetError):
        aggregate_sessions([s], 4)


def test_check_profile():
    env = aggregate_sessions([ChargingSession(0, 3, 2.0, 1.0)], 3)
    assert check_profile([1, 1, 0], env)
    assert check_profile([0, 1, 1], env)
    assert not check_profile([2, 0, 0], env)  # power limit
    assert not check_profile([0, 0, 1], env)  # energy by departure
    assert not check_profile([1, 1, 1], env)  # over-delivery
    with pytest.raises(FleetError):
        check_profile([1, 1], env)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 40))
def test_envelope_invariants(seed, count):
    sessions = synth_sessions(seed, count, SessionParams(), horizon=24)
    env = aggregate_sessions(sessions, 24)
    inc_fast = np.diff(np.concatenate([[0], env.cum_fast]))
    inc_slow = np.diff(np.concatenate([[0], env.cum_slow]))
    assert np.all(env.cum_slow <= env.cum_fast + 1e-9)
    assert np.all(inc_fast >= -1e-12) and np.all(inc_slow >= -1e-12)
    assert np.all(inc_fast <= env.p_max + 1e-9) and np.all(inc_slow <= env.p_max + 1e-9)
    assert env.cum_fast[-1] == pytest.approx(sum(s.energy_need for s in sessions))
    assert env.cum_slow[-1] == env.cum_fast[-1]
    # the earliest and latest aggregate schedules pass the envelope check
    assert check_profile(inc_fast, env) and check_profile(inc_slow, env)


def test_synth_sessions_deterministic_and_feasible():
    a = synth_sessions(5, 200)
    assert a == synth_sessions(5, 200)
    for s in a:
        s.check()
        assert 0 <= s.arrival < s.departure <= 24
    long = synth_sessions(5, 200, clip=False)
    assert max(s.departure for s in long) > 24


def test_session_csv_round_trip(tmp_path):
    sessions = synth_sessions(1, 10)
    path = tmp_path / "s.csv"
    write_sessions(path, sessions)
    assert read_sessions(path) == sessions
    path.write_text("arrival,departure\n1,2\n")
    with pytest.raises(FleetError):
        read_sessions(path)
