"""Virtual-battery aggregation of EV charging sessions."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

DEFAULT_TOL = 1e-6  # MWh


class FleetError(ValueError):
    pass


@dataclass(frozen=True)
class ChargingSession:
    arrival: int
    departure: int  # exclusive
    energy_need: float  # MWh
    max_power: float  # MW

    def check(self, dt: float = 1.0) -> None:
        if self.arrival >= self.departure:
            raise FleetError(f"session {self}: arrival must precede departure")
        if self.max_power < 0 or self.energy_need < 0:
            raise FleetError(f"session {self}: negative power or energy")
        cap = self.max_power * (self.departure - self.arrival) * dt
        if self.energy_need > cap + 1e-12:
            raise FleetError(f"session {self}: needs {self.energy_need} MWh, window allows {cap}")


@dataclass(frozen=True)
class FleetEnvelope:
    p_max: np.ndarray  # MW per step
    cum_fast: np.ndarray  # MWh after each step, charging as early as possible
    cum_slow: np.ndarray  # MWh after each step, charging as late as possible

    @property
    def horizon(self) -> int:
        return len(self.p_max)

    @property
    def energy(self) -> float:
        return float(self.cum_fast[-1]) if len(self.cum_fast) else 0.0

    def scaled(self, factor: float) -> "FleetEnvelope":
        return FleetEnvelope(self.p_max * factor, self.cum_fast * factor, self.cum_slow * factor)


def _earliest(s: ChargingSession, horizon: int, dt: float) -> np.ndarray:
    p = np.zeros(horizon)
    left = s.energy_need
    for t in range(s.arrival, s.departure):
        step = min(s.max_power * dt, left)
        p[t] = step / dt
        left -= step
    return p


def _latest(s: ChargingSession, horizon: int, dt: float) -> np.ndarray:
    p = np.zeros(horizon)
    left = s.energy_need
    for t in reversed(range(s.arrival, s.departure)):
        step = min(s.max_power * dt, left)
        p[t] = step / dt
        left -= step
    return p


def aggregate_sessions(sessions, horizon: int, dt: float = 1.0, open_end: bool = False) -> FleetEnvelope:
    """Fleet envelope of the sessions over ``horizon`` steps.

    With ``open_end`` sessions may depart after the horizon; their schedules
    are built on the longer window and cut at the horizon, so the slow bound
    ends below the fast one (energy still deliverable after the last step).
    """
    sessions = list(sessions)
    span = horizon
    for s in sessions:
        if s.arrival < 0 or s.arrival >= max(horizon, 1) or (s.departure > horizon and not open_end):
            raise FleetError(f"session {s} outside horizon 0..{horizon}")
        s.check(dt)
        span = max(span, s.departure)
    p_max = np.zeros(span)
    fast = np.zeros(span)
    slow = np.zeros(span)
    for s in sessions:
        p_max[s.arrival:s.departure] += s.max_power
        fast += _earliest(s, span, dt)
        slow += _latest(s, span, dt)
    cum_fast = np.cumsum(fast) * dt
    cum_slow = np.cumsum(slow) * dt
    # both cumulative sums end at the total need; remove round-off between them
    cum_slow = np.minimum(cum_slow, cum_fast)
    if span:
        cum_slow[-1] = cum_fast[-1]
    return FleetEnvelope(p_max[:horizon], cum_fast[:horizon], cum_slow[:horizon])


def check_profile(profile, env: FleetEnvelope, dt: float = 1.0, tol: float = DEFAULT_TOL) -> bool:
    """Whether a fleet power profile respects the aggregate envelope."""
    profile = np.asarray(profile, dtype=float)
    if profile.shape != env.p_max.shape:
        raise FleetError(f"profile length {profile.shape} != envelope length {env.p_max.shape}")
    if np.any(profile < -tol / dt) or np.any(profile > env.p_max + tol / dt):
        return False
    cum = np.cumsum(profile) * dt
    return bool(np.all(cum >= env.cum_slow - tol) and np.all(cum <= env.cum_fast + tol))


@dataclass(frozen=True)
class SessionParams:
    """Distributions for synthetic domestic charging sessions (hours, MWh, MW)."""
    arrival_mean: float = 18.0
    arrival_std: float = 2.0
    stay_mean: float = 12.0
    stay_std: float = 2.0
    energy_mean: float = 0.010
    energy_std: float = 0.004
    max_power: float = 0.007

    def check(self) -> None:
        if min(self.arrival_std, self.stay_std, self.energy_std) < 0:
            raise FleetError("standard deviations must be nonnegative")
        if self.max_power <= 0 or self.stay_mean <= 0 or self.energy_mean < 0:
            raise FleetError("max_power and stay_mean must be positive, energy_mean nonnegative")


def synth_sessions(seed: int, count: int, params: SessionParams | None = None,
                   horizon: int = 24, dt: float = 1.0, clip: bool = True) -> list[ChargingSession]:
    """Draw ``count`` feasible sessions.

    Stays running past the end of the day are clipped to the horizon and
    their energy is prorated by the fraction of the stay that remains, unless
    ``clip`` is off (for :func:`aggregate_sessions` with ``open_end``).
    """
    params = params or SessionParams()
    params.check()
    if count < 0:
        raise FleetError("count must be nonnegative")
    rng = np.random.default_rng(seed)
    arr = np.clip(np.rint(rng.normal(params.arrival_mean, params.arrival_std, count)), 0, horizon - 1)
    stay = np.maximum(1, np.rint(rng.normal(params.stay_mean, params.stay_std, count)))
    energy = np.maximum(0.0, rng.normal(params.energy_mean, params.energy_std, count))
    sessions = []
    for a, d, e in zip(arr.astype(int), stay.astype(int), energy):
        dep = min(a + d, horizon) if clip else a + d
        e = e * (dep - a) / d
        e = min(e, params.max_power * (dep - a) * dt)
        sessions.append(ChargingSession(int(a), int(dep), float(e), params.max_power))
    return sessions


def read_sessions(path) -> list[ChargingSession]:
    path = Path(path)
    out = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        need = {"arrival_step", "departure_step", "energy_mwh", "max_power_mw"}
        if reader.fieldnames is None or not need <= set(reader.fieldnames):
            raise FleetError(f"{path}: header must contain {sorted(need)}")
        for lineno, rec in enumerate(reader, start=2):
            try:
                s = ChargingSession(int(rec["arrival_step"]), int(rec["departure_step"]),
                                    float(rec["energy_mwh"]), float(rec["max_power_mw"]))
            except ValueError as exc:
                raise FleetError(f"{path}:{lineno}: {exc}") from exc
            out.append(s)
    return out


def write_sessions(path, sessions) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["arrival_step", "departure_step", "energy_mwh", "max_power_mw"])
        for s in sessions:
            w.writerow([s.arrival, s.departure, repr(s.energy_need), repr(s.max_power)])
