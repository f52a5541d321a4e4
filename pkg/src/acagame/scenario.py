"""Load/price scenario generation, ingestion, and the Gaussian stopping rule."""

from __future__ import annotations

import csv
import math
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.stats import norm

from .network import NetworkModel

# stream ids of the keyed generator
LOAD_STREAM, PRICE_STREAM, SPREAD_STREAM, TRUTH_STREAM = 1, 2, 3, 4


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class Scenario:
    id: int
    da_price: np.ndarray  # EUR/MWh per step
    rc_spread: np.ndarray  # EUR/MWh per step
    inflexible: np.ndarray  # MW, (bus, step) in network bus order

    def __post_init__(self):
        if self.da_price.shape != self.rc_spread.shape:
            raise ScenarioError("price and spread lengths differ")
        if self.inflexible.shape[1] != self.da_price.shape[0]:
            raise ScenarioError("load horizon differs from price horizon")
        if np.any(self.rc_spread < 0):
            raise ScenarioError(f"scenario {self.id}: negative redispatch spread")

    @property
    def horizon(self) -> int:
        return len(self.da_price)


@dataclass(frozen=True)
class UncertaintyConfig:
    sigma: float = 0.01
    alpha: float = 0.05
    delta_frac: float = 0.05
    seed: int = 1
    n_min: int = 2
    n_max: int = 2000

    def __post_init__(self):
        if self.sigma < 0:
            raise ScenarioError("sigma must be nonnegative")
        if not 0 < self.alpha < 1:
            raise ScenarioError("alpha must lie in (0, 1)")
        if self.delta_frac <= 0:
            raise ScenarioError("delta_frac must be positive")
        if self.n_min < 2 or self.n_max < self.n_min:
            raise ScenarioError("need 2 <= n_min <= n_max")


def keyed_rng(seed: int, stream: int, index: int) -> np.random.Generator:
    """Independent generator per (seed, stream, scenario) key."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(stream), int(index)]))


def load_scenario(net: NetworkModel, sigma: float, seed: int, index: int,
                  stream: int = LOAD_STREAM) -> np.ndarray:
    """One (bus, step) draw of the inflexible injections in MW."""
    forecast = net.forecast()
    nb, T = forecast.shape
    kinds = [b.kind for b in net.buses]
    if any(k not in ("load", "wind", "solar") for k in kinds):
        missing = [b.id for b in net.buses if b.kind not in ("load", "wind", "solar")]
        raise ScenarioError(f"buses {missing} lack a load/wind/solar class tag")
    eta = keyed_rng(seed, stream, index).standard_normal((nb, T)) * sigma
    walk = np.zeros((nb, T))
    walk[:, 1:] = np.cumsum(eta[:, :-1], axis=1)  # eps_0 = 0
    solar = np.array([k == "solar" for k in kinds])
    eps = np.where(solar[:, None], eta, walk)
    p = forecast * (1.0 + eps)
    pure_load = np.array([k == "load" for k in kinds])
    p[pure_load] = np.maximum(p[pure_load], 0.0)
    return p


def gen_load_scenarios(net: NetworkModel, cfg: UncertaintyConfig, count: int,
                       start: int = 0) -> list[np.ndarray]:
    return [load_scenario(net, cfg.sigma, cfg.seed, i) for i in range(start, start + count)]


@dataclass(frozen=True)
class PriceModel:
    base_da: tuple[float, ...]
    da_vol: float = 0.0
    spread_mean: float = 20.0
    spread_vol: float = 0.0

    def __post_init__(self):
        if self.da_vol < 0 or self.spread_vol < 0 or self.spread_mean < 0:
            raise ScenarioError("price volatilities and spread mean must be nonnegative")


def price_scenario(model: PriceModel, seed: int, index: int,
                   truth: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """One (DA price, spread) draw; ``truth`` uses streams independent of the planning draws."""
    off = 10 * TRUTH_STREAM if truth else 0
    base = np.asarray(model.base_da, dtype=float)
    T = len(base)
    steps = keyed_rng(seed, PRICE_STREAM + off, index).standard_normal(T) * model.da_vol
    walk = np.concatenate([[0.0], np.cumsum(steps[:-1])])
    da = base + walk
    if model.spread_vol == 0 or model.spread_mean == 0:
        spread = np.full(T, model.spread_mean)
    else:
        s2 = math.log1p((model.spread_vol / model.spread_mean) ** 2)
        mu = math.log(model.spread_mean) - 0.5 * s2
        z = keyed_rng(seed, SPREAD_STREAM + off, index).standard_normal(T)
        spread = np.maximum(np.exp(mu + math.sqrt(s2) * z), 0.0)
    return da, spread


def gen_price_scenarios(seed: int, count: int, base_da, da_vol: float = 0.0,
                        spread_mean: float = 20.0, spread_vol: float = 0.0,
                        start: int = 0) -> list[tuple[np.ndarray, np.ndarray]]:
    model = PriceModel(tuple(float(v) for v in base_da), da_vol, spread_mean, spread_vol)
    return [price_scenario(model, seed, i) for i in range(start, start + count)]


def load_price_scenarios(path, horizon: int) -> dict[int, tuple[np.ndarray, np.ndarray]]:
    """Read ``scenario_id,step,da_price_eur_mwh,rc_spread_eur_mwh`` rows."""
    path = Path(path)
    rows: dict[int, dict[int, tuple[float, float]]] = defaultdict(dict)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        need = {"scenario_id", "step", "da_price_eur_mwh", "rc_spread_eur_mwh"}
        if reader.fieldnames is None or not need <= set(reader.fieldnames):
            raise ScenarioError(f"{path}: header must contain {sorted(need)}")
        for lineno, rec in enumerate(reader, start=2):
            try:
                sid, step = int(rec["scenario_id"]), int(rec["step"])
                da, spread = float(rec["da_price_eur_mwh"]), float(rec["rc_spread_eur_mwh"])
            except ValueError as exc:
                raise ScenarioError(f"{path}:{lineno}: {exc}") from exc
            if spread < 0:
                raise ScenarioError(f"{path}:{lineno}: negative spread {spread} "
                                    f"(scenario {sid}, step {step})")
            if not 0 <= step < horizon:
                raise ScenarioError(f"{path}:{lineno}: step {step} outside horizon {horizon}")
            rows[sid][step] = (da, spread)
    out = {}
    for sid in sorted(rows):
        steps = rows[sid]
        if len(steps) != horizon:
            raise ScenarioError(f"{path}: scenario {sid} has {len(steps)} steps, expected {horizon}")
        out[sid] = (np.array([steps[t][0] for t in range(horizon)]),
                    np.array([steps[t][1] for t in range(horizon)]))
    return out


def write_price_scenarios(path, blocks: dict[int, tuple[np.ndarray, np.ndarray]]) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["scenario_id", "step", "da_price_eur_mwh", "rc_spread_eur_mwh"])
        for sid in sorted(blocks):
            da, spread = blocks[sid]
            for t in range(len(da)):
                w.writerow([sid, t, repr(float(da[t])), repr(float(spread[t]))])


def write_load_scenarios(path, net: NetworkModel, loads: dict[int, np.ndarray]) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["scenario_id", "bus_id", "step", "p_if_mw"])
        for sid in sorted(loads):
            arr = loads[sid]
            for n, bus in enumerate(net.buses):
                for t in range(arr.shape[1]):
                    w.writerow([sid, bus.id, t, repr(float(arr[n, t]))])


def read_load_scenarios(path, net: NetworkModel, horizon: int) -> dict[int, np.ndarray]:
    path = Path(path)
    out: dict[int, np.ndarray] = {}
    seen: dict[int, int] = defaultdict(int)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        for lineno, rec in enumerate(reader, start=2):
            try:
                sid, bus, t = int(rec["scenario_id"]), int(rec["bus_id"]), int(rec["step"])
                val = float(rec["p_if_mw"])
                n = net.position(bus)
            except (KeyError, ValueError) as exc:
                raise ScenarioError(f"{path}:{lineno}: {exc}") from exc
            if not 0 <= t < horizon:
                raise ScenarioError(f"{path}:{lineno}: step {t} outside horizon {horizon}")
            arr = out.setdefault(sid, np.full((len(net.buses), horizon), np.nan))
            arr[n, t] = val
            seen[sid] += 1
    for sid, arr in out.items():
        if np.isnan(arr).any():
            raise ScenarioError(f"{path}: scenario {sid} is incomplete")
    return out


def assemble(index: int, prices: tuple[np.ndarray, np.ndarray], loads: np.ndarray) -> Scenario:
    """Pair the index-th draw of each independent stream."""
    da, spread = prices
    return Scenario(index, np.asarray(da, dtype=float), np.asarray(spread, dtype=float),
                    np.asarray(loads, dtype=float))


def stopping_check(samples, alpha: float = 0.05, delta_frac: float = 0.05) -> str:
    """``"stop"`` once the sample mean is within ``delta_frac * s`` with prob. ``1 - alpha``."""
    x = np.asarray(samples, dtype=float)
    n = len(x)
    if n < 2:
        return "continue"
    s2 = float(np.var(x, ddof=1))
    if s2 <= 0.0 or not math.isfinite(delta_frac):
        return "stop"
    s = math.sqrt(s2)
    delta = delta_frac * s
    miss = 2.0 * norm.cdf(-math.sqrt(n) * delta / s)
    return "stop" if (1.0 - miss) - (1.0 - alpha) >= 0.0 else "continue"


def stop_threshold(alpha: float, delta_frac: float) -> int:
    """Smallest N at which :func:`stopping_check` stops for any s > 0."""
    return max(2, math.ceil((norm.ppf(1 - alpha / 2) / delta_frac) ** 2))
