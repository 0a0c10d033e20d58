"""Scenario orchestration: config files, runs, output files, audits.

A scenario file is an INI document; `run_scenario` executes one
(config, seed, strategy) combination and writes a fixed set of files
into the output directory:

  config.txt        resolved configuration echo
  trace.txt         one record per resolved query, stable field order
  metrics.csv       query_id,strategy,seed,system_size,messages,latency_ms,raa,mra,setting
  node_metrics.csv  node_id,window_messages,window_bytes
  pools.csv         time_ms,rmc_id,reserved,free,free_ownership
  summary.txt       run-level aggregates

Identical (config, seed) inputs produce byte-identical files.
"""
from __future__ import annotations

import configparser
import csv
import io
import statistics
from dataclasses import dataclass, field
from pathlib import Path

from . import __version__
from .clustering import ClusteringParams, cluster_system
from .engine import Engine, EngineConfig
from .errors import ConfigurationError, SimulationError
from .metrics import RunMetrics, account_run
from .overlay import Overlay
from .rmc import build_rmcs
from .strategies import get_strategy
from .topology import SystemParams, generate_system
from .workload import WorkloadSpec, generate_arrivals


@dataclass
class ScenarioConfig:
    name: str = "scenario"
    system: SystemParams = field(default_factory=SystemParams)
    cluster: ClusteringParams = field(default_factory=ClusteringParams)
    rmc_count: int = 20
    reservation_window_ms: float = 8000.0
    dwell_ms: float = 0.0
    checkpoint_ms: float = 20000.0
    workload: WorkloadSpec = field(default_factory=WorkloadSpec)
    strategy: str = "elcore"
    seeds: tuple[int, ...] = (1,)
    window_ms: tuple[float, float] = (0.0, 1e12)
    compute_mra: bool = True
    keep_visits: bool = False

    def validate(self) -> None:
        self.system.validate()
        self.cluster.validate()
        self.workload.validate()
        get_strategy(self.strategy)
        if self.rmc_count < 1:
            raise ConfigurationError("at least one resource manager required")
        if self.reservation_window_ms <= 0:
            raise ConfigurationError("reservation window must be positive")
        if self.dwell_ms < 0:
            raise ConfigurationError("dwell must be non-negative")
        if self.checkpoint_ms <= 0:
            raise ConfigurationError("checkpoint interval must be positive")
        if not self.seeds:
            raise ConfigurationError("at least one seed required")
        lo, hi = self.window_ms
        if lo < 0 or hi <= lo:
            raise ConfigurationError("window must be a non-empty interval")


def _parse_mesh(text: str) -> tuple[int, int, int]:
    parts = text.lower().replace("x", " ").split()
    if len(parts) != 3:
        raise ConfigurationError(f"mesh wants three dimensions, got {text!r}")
    dx, dy, dz = (int(p) for p in parts)
    return dx, dy, dz


def load_config(path: str | Path) -> ScenarioConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"config file not found: {path}")
    parser = configparser.ConfigParser()
    parser.read(path)
    cfg = ScenarioConfig(name=path.stem)

    if parser.has_section("system"):
        s = parser["system"]
        sys_kwargs: dict = {}
        chips = s.getint("chips_per_node", fallback=2)
        per_chip = s.getint("cores_per_chip", fallback=8)
        sys_kwargs["chips_per_node"] = chips
        sys_kwargs["cores_per_chip"] = per_chip
        if "nodes" in s:
            sys_kwargs["nodes"] = s.getint("nodes")
        elif "cores" in s:
            cores = s.getint("cores")
            per_node = chips * per_chip
            if cores % per_node:
                raise ConfigurationError(
                    f"{cores} cores not divisible by {per_node} per node")
            sys_kwargs["nodes"] = cores // per_node
        if "mesh" in s:
            sys_kwargs["mesh_dims"] = _parse_mesh(s["mesh"])
        if "torus" in s:
            sys_kwargs["torus"] = s.getboolean("torus")
        if "beta" in s:
            sys_kwargs["beta"] = s.getfloat("beta")
        if "type_a_count" in s:
            sys_kwargs["type_a_count"] = s.getint("type_a_count")
        if "type_a_fraction" in s:
            sys_kwargs["type_a_fraction"] = s.getfloat("type_a_fraction")
        cfg.system = SystemParams(**sys_kwargs)

    if parser.has_section("cluster"):
        c = parser["cluster"]
        cfg.cluster = ClusteringParams(
            eta=c.getint("eta", fallback=cfg.cluster.eta),
            lambda_ns=c.getint("lambda_ns", fallback=cfg.cluster.lambda_ns))

    if parser.has_section("rmc"):
        r = parser["rmc"]
        cfg.rmc_count = r.getint("count", fallback=cfg.rmc_count)
        cfg.reservation_window_ms = r.getfloat(
            "reservation_window_ms", fallback=cfg.reservation_window_ms)
        cfg.dwell_ms = r.getfloat("dwell_ms", fallback=cfg.dwell_ms)

    if parser.has_section("workload"):
        w = parser["workload"]
        cfg.workload = WorkloadSpec(
            template=w.get("setting", fallback=cfg.workload.template),
            queries=w.getint("queries", fallback=cfg.workload.queries),
            interval_ms=w.getfloat("interval", fallback=cfg.workload.interval_ms),
            stream=w.get("stream", fallback=cfg.workload.stream),
            arrival=w.get("arrival", fallback=cfg.workload.arrival),
            requesters=w.getint("requesters", fallback=cfg.workload.requesters))

    if parser.has_section("run"):
        r = parser["run"]
        cfg.strategy = r.get("strategy", fallback=cfg.strategy)
        if "seeds" in r:
            cfg.seeds = tuple(int(x) for x in r["seeds"].replace(",", " ").split())
        if "window_ms" in r:
            lo, hi = r["window_ms"].replace(":", " ").replace("-", " ").split()
            cfg.window_ms = (float(lo), float(hi))
        cfg.compute_mra = r.getboolean("compute_mra", fallback=cfg.compute_mra)
        cfg.keep_visits = r.getboolean("keep_visits", fallback=cfg.keep_visits)
        cfg.checkpoint_ms = r.getfloat("checkpoint_ms", fallback=cfg.checkpoint_ms)

    cfg.validate()
    return cfg


def config_echo(cfg: ScenarioConfig, seed: int, strategy: str) -> str:
    sysp = cfg.system
    lines = {
        "name": cfg.name,
        "version": __version__,
        "seed": seed,
        "strategy": strategy,
        "system.nodes": sysp.nodes,
        "system.chips_per_node": sysp.chips_per_node,
        "system.cores_per_chip": sysp.cores_per_chip,
        "system.cores": sysp.total_cores,
        "system.mesh": "x".join(str(d) for d in sysp.resolved_mesh_dims()),
        "system.torus": sysp.torus,
        "system.beta": sysp.beta,
        "system.type_a_target": sysp.type_a_target(),
        "cluster.eta": cfg.cluster.eta,
        "cluster.lambda_ns": cfg.cluster.lambda_ns,
        "rmc.count": cfg.rmc_count,
        "rmc.reservation_window_ms": cfg.reservation_window_ms,
        "rmc.dwell_ms": cfg.dwell_ms,
        "workload.setting": cfg.workload.template,
        "workload.queries": cfg.workload.queries,
        "workload.interval_ms": cfg.workload.interval_ms,
        "workload.stream": cfg.workload.stream,
        "workload.arrival": cfg.workload.arrival,
        "workload.requesters": cfg.workload.requesters,
        "run.window_ms": f"{cfg.window_ms[0]:g}:{cfg.window_ms[1]:g}",
        "run.compute_mra": cfg.compute_mra,
        "run.checkpoint_ms": cfg.checkpoint_ms,
    }
    return "".join(f"{k} = {v}\n" for k, v in lines.items())


# -- output files -------------------------------------------------------------


def _fmt(x: float) -> str:
    return f"{x:.6f}"


def write_trace(path: Path, engine: Engine) -> None:
    traces = sorted(engine.traces, key=lambda t: t.query_id)
    with path.open("w", newline="\n") as fh:
        for t in traces:
            sel = "|".join(",".join(str(r) for r in group) if group else "-"
                           for group in t.selections) or "-"
            mra = "-" if t.mra is None else _fmt(t.mra)
            fh.write(
                f"q={t.query_id} setting={t.setting} "
                f"start_ms={_fmt(t.start_ns / 1e6)} "
                f"finish_ms={_fmt(t.finish_ns / 1e6)} "
                f"release_ms={_fmt(t.release_ns / 1e6)} "
                f"messages={t.messages} matched={t.matched} "
                f"raa={_fmt(t.raa)} mra={mra} sel={sel}\n")


def write_metrics(path: Path, metrics: RunMetrics) -> None:
    cols = ["query_id", "strategy", "seed", "system_size", "messages",
            "latency_ms", "raa", "mra", "setting"]
    rows = sorted(metrics.rows, key=lambda r: r["query_id"])
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(cols)
        for row in rows:
            out = []
            for c in cols:
                v = row[c]
                out.append(_fmt(v) if isinstance(v, float) else str(v))
            writer.writerow(out)


def write_node_metrics(path: Path, metrics: RunMetrics) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["node_id", "window_messages", "window_bytes"])
        for node_id, msgs, nbytes in metrics.node_rows:
            writer.writerow([node_id, msgs, nbytes])


def write_pools(path: Path, engine: Engine) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["time_ms", "rmc_id", "reserved", "free",
                         "free_ownership"])
        for t_ns, rmc_id, reserved, free, fown in engine.pool_log:
            writer.writerow([_fmt(t_ns / 1e6), rmc_id, reserved, free, fown])


def write_summary(path: Path, metrics: RunMetrics) -> None:
    with path.open("w", newline="\n") as fh:
        for key in sorted(metrics.summary):
            fh.write(f"{key} = {_fmt(metrics.summary[key])}\n")


# -- running -------------------------------------------------------------------


def build_engine(cfg: ScenarioConfig, seed: int, strategy_name: str) -> Engine:
    strategy = get_strategy(strategy_name)
    topo = generate_system(cfg.system, seed)
    vnodes = cluster_system(topo, cfg.cluster, seed)
    overlay = Overlay(topo, vnodes, layers=strategy.layers,
                      sn_records=strategy.sn_records,
                      stamp_informed=strategy.stamp_informed)
    rmcs, directory = build_rmcs(topo, vnodes, cfg.rmc_count)
    ecfg = EngineConfig(
        reservation_window_ns=int(cfg.reservation_window_ms * 1e6),
        dwell_ns=int(cfg.dwell_ms * 1e6),
        checkpoint_ns=int(cfg.checkpoint_ms * 1e6),
        compute_mra=cfg.compute_mra,
        keep_visits=cfg.keep_visits)
    window_ns = (int(cfg.window_ms[0] * 1e6), int(min(cfg.window_ms[1], 9e12) * 1e6))
    return Engine(topo, overlay, rmcs, directory, strategy, seed, ecfg,
                  window_ns, setting=cfg.workload.template)


def run_scenario(cfg: ScenarioConfig, seed: int | None = None,
                 strategy: str | None = None,
                 out_dir: str | Path | None = None) -> RunMetrics:
    cfg.validate()
    seed = cfg.seeds[0] if seed is None else seed
    strategy = cfg.strategy if strategy is None else strategy
    engine = build_engine(cfg, seed, strategy)
    rmcs = sorted(engine.rmcs.values(), key=lambda r: r.rmc_id)
    arrivals = generate_arrivals(cfg.workload, rmcs, seed)
    for a in arrivals:
        engine.submit(a.query, a.rmc_id, a.start_ns, a.duration_ns)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    try:
        engine.run()
    except SimulationError:
        if out is not None:
            write_pools(out / "pools.csv", engine)
        raise
    metrics = account_run(sorted(engine.traces, key=lambda t: t.query_id),
                          engine.tally, cfg.system.nodes)
    if out is not None:
        (out / "config.txt").write_text(config_echo(cfg, seed, strategy),
                                        newline="\n")
        write_trace(out / "trace.txt", engine)
        write_metrics(out / "metrics.csv", metrics)
        write_node_metrics(out / "node_metrics.csv", metrics)
        write_pools(out / "pools.csv", engine)
        write_summary(out / "summary.txt", metrics)
    return metrics


# -- summarize -------------------------------------------------------------------


def _run_dirs(root: Path) -> list[Path]:
    if (root / "metrics.csv").is_file():
        return [root]
    return sorted(p.parent for p in root.rglob("metrics.csv"))


def _read_metrics(path: Path) -> list[dict]:
    with path.open() as fh:
        return list(csv.DictReader(fh))


def summarize(root: str | Path) -> list[dict]:
    """Aggregate per-run metrics into one row per (setting, strategy, size)."""
    root = Path(root)
    dirs = _run_dirs(root)
    if not dirs:
        raise ConfigurationError(f"no metrics.csv found under {root}")
    per_run: dict[tuple, list[dict]] = {}
    for d in dirs:
        for row in _read_metrics(d / "metrics.csv"):
            key = (row["setting"], row["strategy"], int(row["system_size"]),
                   int(row["seed"]), str(d))
            per_run.setdefault(key, []).append(row)

    def seed_mean(rows: list[dict], col: str) -> float | None:
        vals = [float(r[col]) for r in rows if r[col] != ""]
        return sum(vals) / len(vals) if vals else None

    grouped: dict[tuple, list[tuple]] = {}
    for (setting, strat, size, seed, _), rows in sorted(per_run.items()):
        stats = (seed_mean(rows, "raa"), seed_mean(rows, "mra"),
                 seed_mean(rows, "messages"), seed_mean(rows, "latency_ms"),
                 len(rows),
                 sum(1 for r in rows if int(r["messages"]) < 50) / len(rows))
        grouped.setdefault((setting, strat, size), []).append(stats)

    def agg(vals: list[float | None]) -> tuple[float, float]:
        known = [v for v in vals if v is not None]
        if not known:
            return 0.0, 0.0
        mean = sum(known) / len(known)
        std = statistics.pstdev(known) if len(known) > 1 else 0.0
        return mean, std

    out_rows = []
    for (setting, strat, size), stats in sorted(grouped.items()):
        raa_m, raa_s = agg([s[0] for s in stats])
        mra_m, mra_s = agg([s[1] for s in stats])
        msg_m, msg_s = agg([s[2] for s in stats])
        lat_m, lat_s = agg([s[3] for s in stats])
        share_m, _ = agg([s[5] for s in stats])
        out_rows.append({
            "setting": setting, "strategy": strat, "system_size": size,
            "runs": len(stats), "queries": sum(s[4] for s in stats),
            "mean_raa": raa_m, "std_raa": raa_s,
            "mean_mra": mra_m, "std_mra": mra_s,
            "mean_messages": msg_m, "std_messages": msg_s,
            "mean_latency_ms": lat_m, "std_latency_ms": lat_s,
            "share_msgs_lt_50": share_m,
        })
    cols = list(out_rows[0].keys())
    with (root / "summary.csv").open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(cols)
        for row in out_rows:
            writer.writerow([_fmt(v) if isinstance(v, float) else str(v)
                             for v in (row[c] for c in cols)])
    return out_rows


def format_summary(rows: list[dict]) -> str:
    buf = io.StringIO()
    cols = list(rows[0].keys())
    header = "  ".join(f"{c:>16}" for c in cols)
    buf.write(header + "\n")
    for row in rows:
        cells = [_fmt(row[c]) if isinstance(row[c], float) else str(row[c])
                 for c in cols]
        buf.write("  ".join(f"{c:>16}" for c in cells) + "\n")
    return buf.getvalue()


# -- audit ------------------------------------------------------------------------


def _parse_trace_line(line: str) -> dict[str, str]:
    out = {}
    for part in line.split():
        k, _, v = part.partition("=")
        out[k] = v
    return out


def audit_run_dir(d: Path) -> list[str]:
    problems: list[str] = []
    tag = str(d)

    metrics_path = d / "metrics.csv"
    if metrics_path.is_file():
        for row in _read_metrics(metrics_path):
            if row["mra"] != "" and float(row["mra"]) < float(row["raa"]) - 1e-9:
                problems.append(
                    f"{tag}: query {row['query_id']} has reachable accuracy "
                    f"{row['mra']} below delivered {row['raa']}")
    else:
        problems.append(f"{tag}: metrics.csv missing")

    pools_path = d / "pools.csv"
    if pools_path.is_file():
        totals: dict[str, int] = {}
        with pools_path.open() as fh:
            for row in csv.DictReader(fh):
                t = row["time_ms"]
                totals[t] = totals.get(t, 0) + int(row["reserved"]) + \
                    int(row["free"]) + int(row["free_ownership"])
        if len(set(totals.values())) > 1:
            problems.append(
                f"{tag}: pooled resource total drifts across checkpoints "
                f"{sorted(set(totals.values()))}")
    else:
        problems.append(f"{tag}: pools.csv missing")

    trace_path = d / "trace.txt"
    if trace_path.is_file():
        intervals: dict[int, list[tuple[int, int, str]]] = {}
        for line in trace_path.read_text().splitlines():
            if not line.strip():
                continue
            rec = _parse_trace_line(line)
            rids: list[int] = []
            for group in rec["sel"].split("|"):
                if group and group != "-":
                    rids.extend(int(x) for x in group.split(","))
            if len(rids) != len(set(rids)):
                problems.append(
                    f"{tag}: query {rec['q']} lists a resource twice")
            finish = round(float(rec["finish_ms"]) * 1e6)
            release = round(float(rec["release_ms"]) * 1e6)
            for rid in set(rids):
                intervals.setdefault(rid, []).append((finish, release, rec["q"]))
        for rid, spans in sorted(intervals.items()):
            spans.sort()
            for (f1, r1, q1), (f2, r2, q2) in zip(spans, spans[1:]):
                if f2 < r1:
                    problems.append(
                        f"{tag}: resource {rid} held by queries {q1} and {q2} "
                        f"at overlapping times")
    else:
        problems.append(f"{tag}: trace.txt missing")
    return problems


def audit(root: str | Path) -> list[str]:
    root = Path(root)
    dirs = _run_dirs(root)
    if not dirs:
        return [f"no run outputs found under {root}"]
    problems = []
    for d in dirs:
        problems.extend(audit_run_dir(d))
    return problems
