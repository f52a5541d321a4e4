import json

import pytest
from click.testing import CliRunner

from acagame.cli import EXIT_CONFIG, EXIT_FAILURES, EXIT_OK, load_config, main

SMALL = """
seed = 3
horizon = 6
[paths]
output = "out"
[game]
fsp_nodes = [2, 14]
p_firm = [8.0, 4.0]
p_aca = [1.0, 1.0]
b_aca = 1
[fleet]
sizes = [3000, 1500]
arrival_mean = 1.0
arrival_std = 1.0
stay_mean = 4.0
stay_std = 1.0
[prices]
base_da = [50.0, 45.0, 43.0, 60.0, 70.0, 55.0]
[uncertainty]
n_min = 2
n_max = 3
[run]
batch_size = 2
scenarios = 3
"""


@pytest.fixture()
def cfg(tmp_path):
    path = tmp_path / "small.toml"
    path.write_text(SMALL)
    return path


def _invoke(*args):
    return CliRunner().invoke(main, [str(a) for a in args], catch_exceptions=False)


def test_default_config_loads():
    rc = load_config()
    assert rc.horizon == 24 and rc.game.fsp_nodes == (2, 14)
    assert rc.game.node_limit == 200
    assert len(rc.pairs) == 4


def test_gen_scenarios_then_run_from_files(cfg, tmp_path):
    r = _invoke("gen-scenarios", "--config", cfg, "--count", 2)
    assert r.exit_code == EXIT_OK, r.output
    out = tmp_path / "out"
    assert (out / "prices.csv").exists() and (out / "loads.csv").exists()
    text = cfg.read_text().replace('output = "out"',
                                   'output = "run2"\nprices = "out/prices.csv"\nloads = "out/loads.csv"')
    cfg.write_text(text)
    r = _invoke("run", "--config", cfg)
    assert r.exit_code == EXIT_OK, r.output
    rows = (tmp_path / "run2" / "results.csv").read_text().splitlines()
    # two pairs by default, two ingested scenarios each
    assert len(rows) == 1 + 2 * 2


def test_run_is_byte_reproducible(cfg, tmp_path):
    blobs = []
    for name in ("a", "b"):
        cfg.write_text(SMALL.replace('output = "out"', f'output = "{name}"'))
        r = _invoke("run", "--config", cfg, "--trace-bnb", "--dump-models")
        assert r.exit_code == EXIT_OK, r.output
        d = tmp_path / name
        blobs.append({p.name: p.read_bytes() for p in d.iterdir() if p.is_file() and p.name != "manifest.json"})
    assert blobs[0] == blobs[1]
    assert (tmp_path / "a" / "models" / "gaming_mpec.lp").exists()
    man = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert man["seed"] == 3 and man["config"]["horizon"] == 6


def test_manifest_reruns_the_study(cfg, tmp_path):
    assert _invoke("run", "--config", cfg).exit_code == EXIT_OK
    first = (tmp_path / "out" / "results.csv").read_bytes()
    (tmp_path / "out" / "results.csv").unlink()
    assert _invoke("run", "--config", tmp_path / "out" / "manifest.json").exit_code == EXIT_OK
    assert (tmp_path / "out" / "results.csv").read_bytes() == first


def test_sweep_budget_command(cfg, tmp_path):
    r = _invoke("sweep-budget", "--config", cfg, "--budgets", "0,1", "--scenarios", 1)
    assert r.exit_code == EXIT_OK, r.output
    assert "B_ACA" in r.output
    assert (tmp_path / "out" / "sweep.csv").read_text().count("\n") == 3


@pytest.mark.parametrize("edit", [
    ('[paths]', '[paths]\nnetwork = "missing.json"'),
    ('[run]', '[run]\npairs = []'),
    ('[run]', '[run]\npairs = ["everyone/gaming"]'),
    ('base_da = [50.0, 45.0, 43.0, 60.0, 70.0, 55.0]', 'base_da = [50.0]'),
    ('[game]', '[gaem]'),
    ('p_aca = [1.0, 1.0]', 'p_aca = [9.0, 1.0]'),
    ('[run]', '[run]\ntruth_policy = "file"'),
])
def test_config_errors_exit_2(cfg, edit):
    cfg.write_text(SMALL.replace(*edit))
    r = _invoke("run", "--config", cfg)
    assert r.exit_code == EXIT_CONFIG
    assert "error" in r.output.lower()


def test_bad_budget_list(cfg):
    assert _invoke("sweep-budget", "--config", cfg, "--budgets", "0,99").exit_code == EXIT_CONFIG
    assert _invoke("sweep-budget", "--config", cfg, "--budgets", "x").exit_code == EXIT_CONFIG


def test_missing_config_file(tmp_path):
    assert _invoke("run", "--config", tmp_path / "nope.toml").exit_code == EXIT_CONFIG


def test_verify_quick_reports_every_check():
    r = _invoke("verify", "--quick")
    lines = r.output.strip().splitlines()
    assert len(lines) == 8
    assert all(line.startswith(("PASS", "FAIL")) for line in lines)
    # the aggregate envelope admits profiles no per-EV split can deliver
    assert r.exit_code == EXIT_FAILURES
