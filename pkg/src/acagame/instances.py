"""Small synthetic instances for oracle checks and the dominance suite."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ev_fleet import FleetEnvelope, SessionParams, aggregate_sessions, synth_sessions
from .models import GameConfig
from .network import Branch, Bus, NetworkModel, build_network
from .scenario import Scenario, keyed_rng


@dataclass
class Instance:
    net: NetworkModel
    envs: dict[int, FleetEnvelope]
    cfg: GameConfig
    scen: Scenario


START_HOUR = 0


def _evening_profile(T: int, peak: float, rng) -> np.ndarray:
    hours = (np.arange(T) * 24.0 / T + START_HOUR) % 24
    shape = 0.55 + 0.45 * np.exp(-0.5 * ((hours - 19.0) / 3.0) ** 2)
    return peak * shape * (1.0 + 0.05 * rng.standard_normal(T))


def desk_instance(seed: int, horizon: int = 24, n_fsp: int = 2, b_aca: int = 3,
                  evs: tuple[int, ...] = (1200, 600), tightness: float = 1.0) -> Instance:
    """Feeder slack - 1 - 2 with EV fleets at the load buses.

    Firm capacities are 12/6 MW and ACA caps 2 MW; fleet sizes are small
    enough that a 3-bus feeder congests only at the evening peak.
    ``horizon`` < 24 compresses the day by sampling every ``24 // horizon``
    hours.
    """
    rng = keyed_rng(seed, 11, 0)
    base = 10.0
    stride = max(1, 24 // horizon)
    loads = [_evening_profile(24, peak, rng)[::stride][:horizon] for peak in (4.0, 3.0)]
    buses = [Bus(0, np.zeros(horizon), 0.0, False, True, "load")]
    for i, prof in enumerate(loads, start=1):
        buses.append(Bus(i, prof, 0.2, i <= n_fsp, False, "load"))
    s_max = tightness * (0.9 + 0.3 * rng.random()) * (sum(l.max() for l in loads) + 4.0) / base
    branches = [Branch(0, 1, 0.01, 0.02, s_max), Branch(1, 2, 0.01, 0.02, 0.8 * s_max)]
    net = build_network(buses, branches, 0.9, 1.1, base)
    fsp = tuple(range(1, n_fsp + 1))
    firm, aca = (12.0, 6.0), (2.0, 2.0)
    envs = {}
    for f, n in enumerate(fsp):
        params = SessionParams(arrival_mean=18.0 - START_HOUR, stay_mean=11.0, energy_mean=0.012,
                               max_power=0.007)
        sessions = synth_sessions(seed * 31 + n, evs[f], params, horizon=24, clip=False)
        env = aggregate_sessions(sessions, 24, open_end=True)
        envs[n] = _resample(env, stride, horizon)
    cfg = GameConfig(fsp, firm[:n_fsp], aca[:n_fsp], b_aca=b_aca)
    t = (np.arange(24)[::stride][:horizon] + START_HOUR) % 24
    da = 60 + 25 * np.sin((t - 8) * np.pi / 12) + 5 * rng.standard_normal(horizon)
    spread = 20 + 10 * rng.random(horizon)
    scen = Scenario(seed, da, spread, net.forecast())
    return Instance(net, envs, cfg, scen)


def _resample(env: FleetEnvelope, stride: int, horizon: int) -> FleetEnvelope:
    """Envelope on a coarser grid; power limits are averaged over each block."""
    if stride == 1:
        return FleetEnvelope(env.p_max[:horizon], env.cum_fast[:horizon], env.cum_slow[:horizon])
    idx = np.arange(horizon) * stride + stride - 1
    idx = np.minimum(idx, len(env.p_max) - 1)
    fast = env.cum_fast[idx]
    slow = env.cum_slow[idx]
    p_max = np.add.reduceat(env.p_max, np.arange(0, len(env.p_max), stride))[:horizon]
    return FleetEnvelope(p_max, fast, slow)


def random_tiny(seed: int, max_steps: int = 6, max_buses: int = 4) -> Instance:
    """Random instance small enough for exhaustive enumeration of ACA plans."""
    rng = keyed_rng(seed, 12, 0)
    T = int(rng.integers(2, max_steps + 1))
    nb = int(rng.integers(2, max_buses + 1))
    buses = [Bus(0, np.zeros(T), 0.0, False, True, "load")]
    parents = [0]
    branches = []
    for i in range(1, nb):
        buses.append(Bus(i, rng.uniform(0.5, 3.0, T), float(rng.uniform(0, 0.3)), False, False, "load"))
        parent = int(rng.choice(parents))
        branches.append((parent, i))
        parents.append(i)
    n_fsp = int(rng.integers(1, min(2, nb - 1) + 1))
    fsp = tuple(sorted(rng.choice(np.arange(1, nb), n_fsp, replace=False).tolist()))
    buses = [Bus(b.id, b.inflexible_profile, b.reactive_factor, b.id in fsp, b.is_slack, b.kind)
             for b in buses]
    base = 10.0
    total = sum(b.inflexible_profile.max() for b in buses)
    s_max = rng.uniform(0.5, 1.0) * (total + 4.0) / base
    net = build_network(buses, [Branch(a, b, 0.01, 0.02, s_max) for a, b in branches], 0.9, 1.1, base)
    firm = tuple(float(rng.integers(4, 9)) for _ in fsp)
    aca = tuple(float(f - rng.integers(2, 4)) for f in firm)
    envs = {}
    for n in fsp:
        p_max = rng.uniform(2.0, 6.0, T)
        energy = rng.uniform(0.3, 0.7) * p_max.sum()
        fast = np.minimum(np.cumsum(p_max), energy)
        # energy that must arrive within the window; the rest may follow later
        need = rng.uniform(0.2, 1.0) * energy
        slow = np.maximum(need - np.cumsum(p_max[::-1])[::-1] + p_max, 0.0)
        envs[n] = FleetEnvelope(p_max, fast, np.minimum(slow, fast))
    b = int(rng.integers(0, 3))
    cfg = GameConfig(fsp, firm, aca, b_aca=b)
    da = rng.uniform(30, 90, T)
    spread = rng.uniform(5, 40, T)
    scen = Scenario(seed, da, spread, net.forecast())
    return Instance(net, envs, cfg, scen)
