import shutil
from pathlib import Path

import pytest

from elcore_sim import cli
from elcore_sim.errors import ConfigurationError, SimulationError
from elcore_sim.harness import (ScenarioConfig, audit, audit_run_dir,
                                config_echo, format_summary, load_config,
                                run_scenario, summarize)

CONFIG_TEXT = """\
[system]
nodes = 4
type_a_count = 16

[cluster]
eta = 8
lambda_ns = 100

[rmc]
count = 4

[workload]
setting = s1
queries = 6
interval = 2
stream = shared
arrival = exp

[run]
strategy = elcore
seeds = 1 2
window_ms = 0:100000
checkpoint_ms = 1000
"""

RUN_FILES = ["config.txt", "trace.txt", "metrics.csv", "node_metrics.csv",
             "pools.csv", "summary.txt"]


@pytest.fixture(scope="module")
def config_path(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "desk.ini"
    path.write_text(CONFIG_TEXT)
    return path


@pytest.fixture(scope="module")
def run_root(tmp_path_factory, config_path):
    root = tmp_path_factory.mktemp("runs")
    cfg = load_config(config_path)
    run_scenario(cfg, seed=1, out_dir=root / "seed1")
    run_scenario(cfg, seed=2, out_dir=root / "seed2")
    return root


def tampered_copy(run_root, tmp_path):
    dst = tmp_path / "copy"
    shutil.copytree(run_root / "seed1", dst)
    return dst


# -- configuration ------------------------------------------------------------


def test_load_config_roundtrip(config_path):
    cfg = load_config(config_path)
    assert cfg.name == "desk"
    assert cfg.system.nodes == 4
    assert cfg.system.type_a_count == 16
    assert cfg.cluster.eta == 8
    assert cfg.rmc_count == 4
    assert cfg.workload.template == "s1"
    assert cfg.workload.queries == 6
    assert cfg.workload.arrival == "exp"
    assert cfg.strategy == "elcore"
    assert cfg.seeds == (1, 2)
    assert cfg.window_ms == (0.0, 100000.0)


def test_load_config_core_count_and_mesh(tmp_path):
    p = tmp_path / "alt.ini"
    p.write_text("[system]\ncores = 64\nmesh = 2x2x2\ntorus = true\n")
    cfg = load_config(p)
    assert cfg.system.nodes == 4
    assert cfg.system.resolved_mesh_dims() == (2, 2, 2)
    assert cfg.system.torus

    p.write_text("[system]\ncores = 65\n")
    with pytest.raises(ConfigurationError):
        load_config(p)
    p.write_text("[system]\nnodes = 4\nmesh = 4x4\n")
    with pytest.raises(ConfigurationError):
        load_config(p)


def test_load_config_missing_file(tmp_path):
    with pytest.raises(ConfigurationError):
        load_config(tmp_path / "absent.ini")


def test_scenario_validation():
    for tweak in (
        {"rmc_count": 0},
        {"seeds": ()},
        {"window_ms": (5.0, 5.0)},
        {"dwell_ms": -1.0},
        {"strategy": "warp"},
        {"checkpoint_ms": 0.0},
    ):
        cfg = ScenarioConfig(**tweak)
        with pytest.raises(ConfigurationError):
            cfg.validate()


def test_config_echo_lists_resolution(config_path):
    cfg = load_config(config_path)
    echo = config_echo(cfg, seed=3, strategy="prw")
    assert "seed = 3\n" in echo
    assert "strategy = prw\n" in echo
    assert "system.cores = 64\n" in echo
    assert "workload.setting = s1\n" in echo


# -- runs ---------------------------------------------------------------------


def test_run_writes_expected_files(run_root):
    for name in RUN_FILES:
        assert (run_root / "seed1" / name).is_file()
    header = (run_root / "seed1" / "metrics.csv").read_text().splitlines()[0]
    assert header == ("query_id,strategy,seed,system_size,messages,"
                      "latency_ms,raa,mra,setting")
    rows = (run_root / "seed1" / "metrics.csv").read_text().splitlines()[1:]
    assert len(rows) == 6
    node_header = (run_root / "seed1" /
                   "node_metrics.csv").read_text().splitlines()
    assert node_header[0] == "node_id,window_messages,window_bytes"
    assert len(node_header) == 1 + 4


def test_rerun_is_byte_identical(config_path, run_root, tmp_path):
    cfg = load_config(config_path)
    again = tmp_path / "again"
    run_scenario(cfg, seed=1, out_dir=again)
    for name in RUN_FILES:
        assert (again / name).read_bytes() == \
            (run_root / "seed1" / name).read_bytes(), name
    assert (run_root / "seed1" / "metrics.csv").read_bytes() != \
        (run_root / "seed2" / "metrics.csv").read_bytes()


def test_run_metrics_accounting(config_path, tmp_path):
    cfg = load_config(config_path)
    metrics = run_scenario(cfg, seed=1, out_dir=tmp_path / "m")
    assert metrics.summary["queries"] == 6.0
    node_total = sum(m for _, m, _ in metrics.node_rows)
    assert node_total == 2 * metrics.summary["window_messages"]
    vnode_total = sum(metrics.vnode_window_msgs.values())
    assert vnode_total == 2 * metrics.summary["window_messages"]


# -- summarize ----------------------------------------------------------------


def test_summarize_groups_runs(run_root):
    rows = summarize(run_root)
    assert len(rows) == 1
    row = rows[0]
    assert row["setting"] == "s1"
    assert row["strategy"] == "elcore"
    assert row["system_size"] == 64
    assert row["runs"] == 2
    assert row["queries"] == 12
    assert 0.0 <= row["mean_raa"] <= 100.0
    assert 0.0 <= row["share_msgs_lt_50"] <= 1.0
    assert (run_root / "summary.csv").is_file()
    text = format_summary(rows)
    assert "mean_raa" in text.splitlines()[0]


def test_summarize_empty_root(tmp_path):
    with pytest.raises(ConfigurationError):
        summarize(tmp_path)


# -- audit ----------------------------------------------------------------------


def test_audit_clean_runs(run_root):
    assert audit(run_root) == []


def test_audit_flags_duplicated_resource(run_root, tmp_path):
    d = tampered_copy(run_root, tmp_path)
    trace = d / "trace.txt"
    lines = trace.read_text().splitlines()
    rec = lines[0]
    sel = rec.split("sel=")[1]
    first_rid = sel.replace("|", ",").split(",")[0]
    assert first_rid != "-"
    lines[0] = rec + f",{first_rid}"  # same resource listed twice
    trace.write_text("\n".join(lines) + "\n")
    problems = audit_run_dir(d)
    assert any("twice" in p for p in problems)


def test_audit_flags_pool_drift(run_root, tmp_path):
    d = tampered_copy(run_root, tmp_path)
    pools = d / "pools.csv"
    lines = pools.read_text().splitlines()
    head, first = lines[0], lines[1].split(",")
    first[3] = str(int(first[3]) + 1)
    lines[1] = ",".join(first)
    pools.write_text("\n".join(lines) + "\n")
    problems = audit_run_dir(d)
    assert any("drifts" in p for p in problems)


def test_audit_flags_unreachable_accuracy(run_root, tmp_path):
    d = tampered_copy(run_root, tmp_path)
    metrics = d / "metrics.csv"
    lines = metrics.read_text().splitlines()
    row = lines[1].split(",")
    row[7] = "0.000001"  # below the delivered accuracy
    lines[1] = ",".join(row)
    metrics.write_text("\n".join(lines) + "\n")
    problems = audit_run_dir(d)
    assert any("below delivered" in p for p in problems)


def test_audit_flags_overlapping_holds(run_root, tmp_path):
    d = tampered_copy(run_root, tmp_path)
    trace = d / "trace.txt"
    lines = [ln for ln in trace.read_text().splitlines() if ln]
    rec = dict(part.partition("=")[::2] for part in lines[0].split())
    sel = rec["sel"]
    clone = lines[0].replace("q=" + rec["q"], "q=999")
    assert sel in clone  # same resources, overlapping window
    trace.write_text("\n".join(lines + [clone]) + "\n")
    problems = audit_run_dir(d)
    assert any("overlapping" in p for p in problems)


def test_audit_missing_files(tmp_path):
    (tmp_path / "metrics.csv").write_text(
        "query_id,strategy,seed,system_size,messages,latency_ms,raa,mra,"
        "setting\n")
    problems = audit_run_dir(tmp_path)
    assert any("pools.csv missing" in p for p in problems)
    assert any("trace.txt missing" in p for p in problems)


# -- command line ---------------------------------------------------------------


def test_cli_run_and_audit(config_path, tmp_path, capsys):
    out = tmp_path / "cli-run"
    assert cli.main(["run", "--config", str(config_path), "--seed", "1",
                     "--out", str(out)]) == 0
    printed = capsys.readouterr().out
    assert "mean_raa" in printed
    assert str(out) in printed
    assert cli.main(["audit", str(out)]) == 0
    assert "audit clean" in capsys.readouterr().out
    assert cli.main(["summarize", str(out)]) == 0
    assert "mean_messages" in capsys.readouterr().out


def test_cli_audit_reports_problems(run_root, tmp_path, capsys):
    d = tampered_copy(run_root, tmp_path)
    (d / "pools.csv").write_text(
        "time_ms,rmc_id,reserved,free,free_ownership\n"
        "0.000000,0,0,1,0\n1.000000,0,0,2,0\n")
    assert cli.main(["audit", str(d)]) == 1
    assert "audit failed" in capsys.readouterr().err


def test_cli_error_codes(tmp_path, capsys, monkeypatch):
    assert cli.main(["run", "--config", str(tmp_path / "no.ini")]) == 2
    assert "error:" in capsys.readouterr().err

    with pytest.raises(SystemExit) as exc:
        cli.main(["run", "--config", "x.ini", "--strategy", "teleport"])
    assert exc.value.code == 2

    assert cli.main(["summarize", str(tmp_path)]) == 2

    def boom(*a, **k):
        raise SimulationError("staged failure", 0)

    monkeypatch.setattr(cli, "run_scenario", boom)
    monkeypatch.setattr(cli, "load_config",
                        lambda p: ScenarioConfig())
    assert cli.main(["run", "--config", "x.ini", "--out",
                     str(tmp_path / "o")]) == 3
    assert "simulation aborted" in capsys.readouterr().err


def test_cli_default_out_uses_environment(config_path, tmp_path, monkeypatch):
    monkeypatch.setenv("ELCORE_SIM_OUT", str(tmp_path / "envout"))
    assert cli.main(["run", "--config", str(config_path), "--seed", "1"]) == 0
    assert (tmp_path / "envout" / "desk-seed1" / "metrics.csv").is_file()
