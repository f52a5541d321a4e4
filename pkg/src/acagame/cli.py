"""Command-line entry point: ``acagame {gen-scenarios,run,sweep-budget,verify}``."""

from __future__ import annotations

import copy
import csv
import json
import logging
import math
import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import click
import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import __version__
from .ev_fleet import FleetError, SessionParams, aggregate_sessions, read_sessions, synth_sessions
from .game import (GameError, GameInputs, ScenarioSource, StrategyPair, TRUTH_POLICIES,
                   run_monte_carlo, sweep_budget, write_results)
from .milp import ModelError
from .models import (GameConfig, build_aca_no_anticipation, build_gaming_mpec, build_ll,
                     build_ml_no_gaming, solve_no_gaming)
from .network import NetworkError, NetworkModel, load_network
from .scenario import (PriceModel, Scenario, ScenarioError, UncertaintyConfig, assemble,
                       load_price_scenarios, load_scenario, price_scenario, read_load_scenarios,
                       write_load_scenarios, write_price_scenarios)

log = logging.getLogger("acagame")

EXIT_OK, EXIT_FAILURES, EXIT_CONFIG = 0, 1, 2

# hourly day-ahead shape used when the config gives no base prices (EUR/MWh)
DEFAULT_BASE_DA = (48.0, 45.0, 43.0, 42.0, 42.0, 44.0, 50.0, 58.0, 62.0, 60.0, 55.0, 50.0,
                   46.0, 44.0, 43.0, 46.0, 52.0, 62.0, 70.0, 72.0, 66.0, 60.0, 55.0, 50.0)


class ConfigError(ValueError):
    pass


CONFIG_ERRORS = (ConfigError, ScenarioError, NetworkError, FleetError, GameError, ModelError,
                 ValueError, OSError)


@dataclass
class RunConfig:
    source: dict  # resolved raw config, written to the manifest
    base_dir: Path
    seed: int
    horizon: int
    network_path: Path | None
    sessions: dict[int, Path]
    prices_path: Path | None
    loads_path: Path | None
    truth_prices_path: Path | None
    truth_loads_path: Path | None
    output: Path
    game: GameConfig
    ucfg: UncertaintyConfig
    price_model: PriceModel
    fleet_sizes: tuple[int, ...]
    session_params: SessionParams
    open_end: bool
    pairs: list[StrategyPair]
    truth_policy: str
    batch_size: int = 50
    hist_bins: int = 50
    scenarios: int = 10
    sweep: list[int] = field(default_factory=list)
    sweep_scenarios: int = 5


def _path(base: Path, value, what: str, must_exist: bool = True) -> Path | None:
    if value in (None, ""):
        return None
    p = Path(value)
    if not p.is_absolute():
        p = base / p
    if must_exist and not p.exists():
        raise ConfigError(f"{what}: file not found: {p}")
    return p


def _read_raw(path: Path | None) -> tuple[dict, Path]:
    if path is None:
        text = resources.files("acagame").joinpath("data/default.toml").read_text(encoding="utf-8")
        return tomllib.loads(text), Path.cwd()
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    if path.suffix == ".json":
        data = json.loads(path.read_text(encoding="utf-8"))
        if "config" not in data:
            raise ConfigError(f"{path}: a JSON config must be a run manifest with a 'config' entry")
        return data["config"], Path(data.get("config_dir", path.parent))
    try:
        return tomllib.loads(path.read_text(encoding="utf-8")), path.parent.resolve()
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def load_config(path=None, seed: int | None = None) -> RunConfig:
    raw, base = _read_raw(path)
    raw = copy.deepcopy(raw)
    if seed is not None:
        raw["seed"] = int(seed)
    known = {"seed", "horizon", "paths", "game", "fleet", "prices", "uncertainty", "solver", "run"}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown config sections {sorted(unknown)}")
    paths = raw.get("paths", {})
    g, fl, pr = raw.get("game", {}), raw.get("fleet", {}), raw.get("prices", {})
    un, so, rn = raw.get("uncertainty", {}), raw.get("solver", {}), raw.get("run", {})
    s = int(raw.get("seed", 1))
    horizon = int(raw.get("horizon", 24))
    try:
        game = GameConfig(
            fsp_nodes=tuple(int(n) for n in g.get("fsp_nodes", (2, 14))),
            p_firm=tuple(float(v) for v in g.get("p_firm", (12.0, 6.0))),
            p_aca=tuple(float(v) for v in g.get("p_aca", (2.0, 2.0))),
            pi_rc=float(g.get("pi_rc", 100.0)),
            b_aca=int(g.get("b_aca", 3)),
            dt=float(g.get("dt", 1.0)),
            big_M=float(so.get("big_M", g.get("big_M", 1e4))),
            K=int(g.get("polygon_sides", 8)),
            lambda_ev=float(g.get("lambda_ev", 0.0)),
            rel_gap=float(so.get("rel_gap", 1e-5)),
            node_limit=int(so.get("node_limit", 100_000)),
        )
        ucfg = UncertaintyConfig(float(un.get("sigma", 0.01)), float(un.get("alpha", 0.05)),
                                 float(un.get("delta_frac", 0.05)), s, int(un.get("n_min", 2)),
                                 int(un.get("n_max", 2000)))
        base_da = tuple(float(v) for v in pr.get("base_da", DEFAULT_BASE_DA))
        price_model = PriceModel(base_da, float(pr.get("da_vol", 3.0)), float(pr.get("spread_mean", 20.0)),
                                 float(pr.get("spread_vol", 5.0)))
        sp = SessionParams(**{k: float(fl[k]) for k in SessionParams.__dataclass_fields__ if k in fl})
        sp.check()
        pairs = [StrategyPair.parse(p) for p in rn.get("pairs", ("none/gaming", "anticipation/gaming"))]
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    if not pairs:
        raise ConfigError("run.pairs is empty: configure at least one strategy pair")
    if len(base_da) != horizon:
        raise ConfigError(f"prices.base_da has {len(base_da)} entries, horizon is {horizon}")
    if game.dt != 1.0 and horizon == 24:
        log.warning("dt != 1 with a 24-step horizon does not cover one day")
    sessions = {int(k): _path(base, v, f"sessions for node {k}")
                for k, v in paths.get("sessions", {}).items()}
    sizes = tuple(int(v) for v in fl.get("sizes", (10000, 5000)))
    if not sessions and len(sizes) != len(game.fsp_nodes):
        raise ConfigError("fleet.sizes needs one entry per FSP node")
    truth_prices = _path(base, paths.get("truth_prices"), "truth prices")
    policy = rn.get("truth_policy", "file" if truth_prices is not None else "same")
    if policy not in TRUTH_POLICIES:
        raise ConfigError(f"run.truth_policy must be one of {TRUTH_POLICIES}")
    if policy == "file" and truth_prices is None:
        raise ConfigError("truth_policy 'file' needs paths.truth_prices")
    return RunConfig(
        source=raw, base_dir=base, seed=s, horizon=horizon,
        network_path=_path(base, paths.get("network"), "network"),
        sessions=sessions,
        prices_path=_path(base, paths.get("prices"), "prices"),
        loads_path=_path(base, paths.get("loads"), "loads"),
        truth_prices_path=truth_prices,
        truth_loads_path=_path(base, paths.get("truth_loads"), "truth loads"),
        output=_path(base, paths.get("output", "out"), "output", must_exist=False),
        game=game, ucfg=ucfg, price_model=price_model, fleet_sizes=sizes, session_params=sp,
        open_end=bool(fl.get("open_end", True)), pairs=pairs, truth_policy=policy,
        batch_size=int(rn.get("batch_size", 50)), hist_bins=int(rn.get("hist_bins", 50)),
        scenarios=int(rn.get("scenarios", 10)), sweep=[int(b) for b in rn.get("sweep", [])],
        sweep_scenarios=int(rn.get("sweep_scenarios", 5)),
    )


def build_network_and_fleets(rc: RunConfig) -> tuple[NetworkModel, dict]:
    if rc.network_path is None:
        with resources.as_file(resources.files("acagame").joinpath("data/network_cigre15.json")) as p:
            net = load_network(p)
    else:
        net = load_network(rc.network_path)
    if net.horizon < rc.horizon:
        raise ConfigError(f"network profiles have {net.horizon} steps, horizon is {rc.horizon}")
    if net.horizon > rc.horizon:
        net = net.truncated(rc.horizon)
    for n in rc.game.fsp_nodes:
        if n not in net.bus_ids:
            raise ConfigError(f"FSP node {n} is not a bus of the network")
    envs = {}
    for f, n in enumerate(rc.game.fsp_nodes):
        if n in rc.sessions:
            sessions = read_sessions(rc.sessions[n])
        elif rc.sessions:
            raise ConfigError(f"no session file for FSP node {n}")
        else:
            sessions = synth_sessions(rc.seed * 1000 + n, rc.fleet_sizes[f], rc.session_params,
                                      horizon=rc.horizon, dt=rc.game.dt, clip=not rc.open_end)
        envs[n] = aggregate_sessions(sessions, rc.horizon, rc.game.dt, open_end=rc.open_end)
    return net, envs


def _truth_day(rc: RunConfig, net: NetworkModel) -> Scenario | None:
    if rc.truth_prices_path is None:
        return None
    prices = load_price_scenarios(rc.truth_prices_path, rc.horizon)
    sid = min(prices)
    if rc.truth_loads_path is not None:
        loads = read_load_scenarios(rc.truth_loads_path, net, rc.horizon)
        if sid not in loads:
            raise ConfigError(f"truth loads lack scenario {sid}")
        return assemble(sid, prices[sid], loads[sid])
    return assemble(sid, prices[sid], net.forecast())


def build_source(rc: RunConfig, net: NetworkModel) -> ScenarioSource:
    prices = load_price_scenarios(rc.prices_path, rc.horizon) if rc.prices_path else None
    loads = read_load_scenarios(rc.loads_path, net, rc.horizon) if rc.loads_path else None
    return ScenarioSource(net, rc.ucfg, rc.price_model, prices, loads, _truth_day(rc, net))


def manifest(rc: RunConfig, command: str) -> dict:
    return {"tool": "acagame", "version": __version__, "command": command, "seed": rc.seed,
            "config_dir": str(rc.base_dir), "config": rc.source}


def _write_json(path: Path, data) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def write_model_files(rc: RunConfig, net, envs, source: ScenarioSource, outdir: Path) -> None:
    """LP text of the decision problems on scenario 0 with no activations."""
    d = outdir / "models"
    d.mkdir(parents=True, exist_ok=True)
    scen = source.scenario(0)
    z0 = np.zeros((len(rc.game.fsp_nodes), scen.horizon))
    models = {"ml_no_gaming": build_ml_no_gaming(envs, rc.game, z0, scen),
              "gaming_mpec": build_gaming_mpec(net, envs, rc.game, z0, scen).problem,
              "high_point_relaxation": build_gaming_mpec(net, envs, rc.game, None, scen).problem,
              "aca_no_anticipation": build_aca_no_anticipation(net, envs, rc.game, scen).problem}
    base = solve_no_gaming(envs, rc.game, z0, scen)
    if base.baseline is not None:
        models["redispatch"] = build_ll(net, envs, rc.game, z0, base.baseline, scen)
    for name, p in models.items():
        (d / f"{name}.lp").write_text(p.to_lp_text(), encoding="utf-8")


def _fail(msg: str) -> None:
    click.echo(f"error: {msg}", err=True)
    sys.exit(EXIT_CONFIG)


def _format_table(rows) -> str:
    head = ("B_ACA", "max_nodes", "median_nodes", "max_explored", "saving_no_antic_%",
            "saving_antic_%", "min_scenario_saving")
    lines = ["  ".join(f"{h:>18}" for h in head)]
    for r in rows:
        vals = (r.budget, r.max_nodes, float(np.median(r.nodes)), max(r.nodes),
                r.saving_no_anticipation, r.saving_anticipation, r.min_scenario_saving)
        lines.append("  ".join(f"{v:>18}" if isinstance(v, int) else f"{v:>18.2f}" for v in vals))
    return "\n".join(lines)


def _write_sweep(path: Path, rows) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["b_aca", "max_nodes", "scenario", "nodes_explored", "f_ul_none",
                    "f_ul_no_anticipation", "f_ul_anticipation"])
        for r in rows:
            for i, n in enumerate(r.nodes):
                w.writerow([r.budget, r.max_nodes, i, n, repr(float(r.f_ul_none[i])),
                            repr(float(r.f_ul_no_anticipation[i])), repr(float(r.f_ul_anticipation[i]))])


@click.group()
@click.version_option(__version__)
@click.option("-v", "--verbose", count=True, help="More logging (repeatable).")
def main(verbose: int) -> None:
    """Simulate and solve the ACA / baseline-gaming / redispatch game."""
    level = logging.WARNING - 10 * min(verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


_config_opt = click.option("--config", "config_path", type=click.Path(path_type=Path), default=None,
                           help="TOML config or JSON run manifest; default: bundled example.")
_seed_opt = click.option("--seed", type=int, default=None, help="Override the config seed.")
_jobs_opt = click.option("--jobs", type=click.IntRange(min=1), default=1, help="Worker processes.")


@main.command("gen-scenarios")
@_config_opt
@_seed_opt
@click.option("--count", type=click.IntRange(min=1), default=None, help="Number of scenarios.")
def cmd_gen_scenarios(config_path, seed, count) -> None:
    """Write price and load scenario files plus a manifest."""
    try:
        rc = load_config(config_path, seed)
        net, _ = build_network_and_fleets(rc)
        n = count or rc.scenarios
        out = rc.output
        out.mkdir(parents=True, exist_ok=True)
        prices = {i: price_scenario(rc.price_model, rc.seed, i) for i in range(n)}
        loads = {i: load_scenario(net, rc.ucfg.sigma, rc.seed, i) for i in range(n)}
        write_price_scenarios(out / "prices.csv", prices)
        write_load_scenarios(out / "loads.csv", net, loads)
        m = manifest(rc, "gen-scenarios")
        m["count"] = n
        _write_json(out / "scenarios_manifest.json", m)
    except CONFIG_ERRORS as exc:
        _fail(str(exc))
    click.echo(f"wrote {n} scenarios to {out}")


@main.command("run")
@_config_opt
@_seed_opt
@_jobs_opt
@click.option("--trace-bnb", is_flag=True, help="Write the branch-and-bound node log.")
@click.option("--dump-models", is_flag=True, help="Write LP files of the decision problems.")
def cmd_run(config_path, seed, jobs, trace_bnb, dump_models) -> None:
    """Monte Carlo study of the configured strategy pairs."""
    try:
        rc = load_config(config_path, seed)
        net, envs = build_network_and_fleets(rc)
        source = build_source(rc, net)
        inputs = GameInputs(net, envs, rc.game)
        rc.output.mkdir(parents=True, exist_ok=True)
        if dump_models:
            write_model_files(rc, net, envs, source, rc.output)
    except CONFIG_ERRORS as exc:
        _fail(str(exc))
    summaries, outcomes = run_monte_carlo(rc.pairs, inputs, rc.ucfg, source, rc.truth_policy,
                                          rc.batch_size, jobs, rc.hist_bins, trace_bnb)
    write_results(rc.output, outcomes, summaries, manifest(rc, "run"))
    if trace_bnb:
        with (rc.output / "bnb_trace.txt").open("w", encoding="utf-8") as fh:
            for o in outcomes:
                if o.trace:
                    fh.write(f"# scenario={o.scenario_id} pair={o.pair.label}\n")
                    fh.writelines(line + "\n" for line in o.trace)
    failures = 0
    for label, s in summaries.items():
        flag = "" if s.stopped else "  (stopping rule not met: n_max or scenario supply reached)"
        click.echo(f"{label:28s} n={s.n:5d} failures={s.failures:3d} "
                   f"E[F_UL]={s.means['f_ul_expected']:.4f} E[F_ML]={s.means['f_ml_expected']:.4f} "
                   f"DSO realized={s.means['dso_realized']:.4f}{flag}")
        failures += s.failures
    if rc.sweep:
        rows = sweep_budget(inputs, source, rc.sweep, rc.sweep_scenarios, jobs)
        _write_sweep(rc.output / "sweep.csv", rows)
        click.echo(_format_table(rows))
    sys.exit(EXIT_FAILURES if failures else EXIT_OK)



@main.command("sweep-budget")
@_config_opt
@_seed_opt
@_jobs_opt
@click.option("--budgets", default=None, help="Comma-separated ACA budgets (default: run.sweep or 0..3).")
@click.option("--scenarios", "count", type=click.IntRange(min=1), default=None)
def cmd_sweep_budget(config_path, seed, jobs, budgets, count) -> None:
    """Explored nodes and DSO savings per ACA budget."""
    try:
        rc = load_config(config_path, seed)
        net, envs = build_network_and_fleets(rc)
        source = build_source(rc, net)
        bs = [int(b) for b in budgets.split(",")] if budgets else (rc.sweep or [0, 1, 2, 3])
        if any(b < 0 or b > rc.horizon for b in bs):
            raise ConfigError(f"budgets must lie in 0..{rc.horizon}")
    except CONFIG_ERRORS as exc:
        _fail(str(exc))
    rows = sweep_budget(GameInputs(net, envs, rc.game), source, bs, count or rc.sweep_scenarios, jobs)
    rc.output.mkdir(parents=True, exist_ok=True)
    _write_sweep(rc.output / "sweep.csv", rows)
    _write_json(rc.output / "sweep_manifest.json", manifest(rc, "sweep-budget"))
    click.echo(_format_table(rows))
    bad = any(not math.isfinite(v) for r in rows for v in r.f_ul_anticipation)
    sys.exit(EXIT_FAILURES if bad else EXIT_OK)


@main.command("verify")
@click.option("--quick", is_flag=True, help="Fewer random instances.")
def cmd_verify(quick) -> None:
    """Run the built-in oracle checks and print one line per check."""
    from .oracles import run_all
    ok = True
    for name, passed, detail in run_all(quick):
        click.echo(f"{'PASS' if passed else 'FAIL'}  {name}: {detail}")
        ok &= passed
    sys.exit(EXIT_OK if ok else EXIT_FAILURES)


if __name__ == "__main__":
    main()
