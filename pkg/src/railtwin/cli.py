"""Command-line entry point: analyze, simulate, sweep, schedule, generate.

Exit codes: 0 success, 1 domain error, 2 input or parse error.
"""

from __future__ import annotations

import argparse
import copy
import csv
import io
import itertools
import json
import sys
from pathlib import Path

from . import collectives, dcqcn, fabricsim
from .analytics import WorkloadAnalyzer
from .config import load_mapping
from .exceptions import ConfigError, ParseError, RailtwinError
from .scheduler import SchedulerPolicy, load_faults, scale_trace, simulate_schedule
from .topology import TopologyConfig, build_topology
from .workload import (
    GenConfig,
    calibrated_config,
    generate_trace,
    load_accounting,
    load_telemetry,
    write_trace,
)

EXIT_OK, EXIT_DOMAIN, EXIT_INPUT = 0, 1, 2


def _existing(path, what: str) -> Path:
    path = Path(path)
    if not path.is_file():
        raise ParseError(f"{what} not found: {path}")
    return path


def _config(args) -> dict:
    if args.config is None:
        return {}
    return load_mapping(_existing(args.config, "config"))


def _seed(args, cfg: dict, required: bool) -> int | None:
    seed = args.seed if args.seed is not None else cfg.get("seed")
    if seed is None and required:
        raise ParseError(f"{args.command} is stochastic: pass --seed or set seed in the config")
    return None if seed is None else int(seed)


def _write_json(path: Path, data) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def _topology(cfg: dict):
    return build_topology(TopologyConfig.from_dict(cfg.get("topology", {})))


# --------------------------------------------------------------------------
# analyze

def cmd_analyze(args) -> int:
    cfg = _config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    trace = args.trace or cfg.get("trace")
    telemetry = args.telemetry or cfg.get("telemetry")
    faults = args.faults or cfg.get("faults")
    jobs = load_accounting(_existing(trace, "trace")) if trace else []
    samples = load_telemetry(_existing(telemetry, "telemetry")) if telemetry else []
    fault_list = load_faults(_existing(faults, "faults")) if faults else []

    rejected = False
    rejects = {}
    for name, parsed in (("accounting", jobs), ("telemetry", samples)):
        if getattr(parsed, "rejects", None):
            rejected = True
            rejects[name] = len(parsed.rejects)
            (out / f"{name}_rejects.csv").write_text(parsed.rejects_csv())
            for r in parsed.rejects[:20]:
                print(f"{name}: line {r.line}: {r.reason}", file=sys.stderr)
    if rejected and not args.allow_rejects:
        print(f"rejected rows written to {out}; rerun with --allow-rejects to "
              "analyze the remaining rows", file=sys.stderr)
        return EXIT_INPUT

    params = cfg.get("analyzer", {})
    report = WorkloadAnalyzer(**params).fit(jobs, samples, fault_list).report_
    report.rejects = rejects
    report.write(out)
    return EXIT_OK


# --------------------------------------------------------------------------
# simulate / sweep

_SIM_KEYS = ("horizon_ns", "segment_bytes", "sample_interval_ns", "cnp_interval_ns",
             "cc_enabled", "check_invariants")


def _sim_inputs(cfg: dict, base_dir: Path | None):
    """Topology, fabric flows and FabricSimulator params for one run."""
    topo = _topology(cfg)
    if "collective" in cfg:
        spec = collectives.CollectiveSpec.from_dict(cfg["collective"])
        flowset = collectives.plan(spec, topo)
        flows = flowset.to_fabric_flows()
    elif "flows" in cfg:
        flowset = None
        if isinstance(cfg["flows"], str):
            path = Path(cfg["flows"])
            if base_dir is not None and not path.is_absolute():
                path = base_dir / path
            flows = collectives.read_flow_csv(_existing(path, "flows"))
        else:
            try:
                flows = [fabricsim.Flow(**{**f, "src": tuple(f["src"]), "dst": tuple(f["dst"])})
                         for f in cfg["flows"]]
            except (TypeError, KeyError) as exc:
                raise ConfigError(f"bad flow entry: {exc}") from None
    else:
        raise ConfigError("simulate config needs 'collective' or 'flows'")
    params = {}
    for key, cls in (("ecn", fabricsim.EcnConfig), ("pfc", fabricsim.PfcConfig),
                     ("shared_buffer", fabricsim.SharedBufferConfig)):
        if key in cfg:
            params[key] = _make(cls, cfg[key], key)
    overrides = cfg.get("dcqcn", {})
    try:
        params["dcqcn"] = dcqcn.DcqcnParams.for_line_rate(topo.config.host_link_gbps, **overrides)
    except TypeError as exc:
        raise ConfigError(f"dcqcn: {exc}") from None
    sim = cfg.get("sim", {})
    unknown = set(sim) - set(_SIM_KEYS)
    if unknown:
        raise ConfigError(f"unknown sim keys: {sorted(unknown)}")
    params.update(sim)
    return topo, flows, flowset, params


def _make(cls, data, name):
    try:
        return cls(**data)
    except TypeError as exc:
        raise ConfigError(f"{name}: {exc}") from None


def _analysis(report, window_ns: float, warmup_ns: float) -> dict:
    totals = report.summary["totals"]
    end = report.summary["end_time_ns"]
    try:
        port = fabricsim.bottleneck_port(report)
    except ValueError:
        port = None
    sustained = (fabricsim.sustained_mark_fraction(report, port, window_ns, warmup_ns)
                 if port else 0.0)
    return {
        "bottleneck_port": port,
        "sustained_mark_fraction": sustained,
        "mark_fraction": totals["mark_fraction"],
        "pauses": totals["pauses"],
        "drops": totals["drops"],
        "throughput_gbps": totals["delivered_bytes"] * 8 / end if end else 0.0,
        "completed_flows": totals["completed_flows"],
        "flows": len(report.summary["flows"]),
        "window_ns": window_ns,
    }


def _simulate_one(cfg: dict, seed: int, out: Path, base_dir: Path | None) -> dict:
    topo, flows, flowset, params = _sim_inputs(cfg, base_dir)
    report = fabricsim.FabricSimulator(seed=seed, **params).run(topo, flows)
    out.mkdir(parents=True, exist_ok=True)
    report.write(out)
    if flowset is not None:
        (out / "flows.csv").write_text(flowset.to_csv())
    analysis = _analysis(report, float(cfg.get("window_ns", 50_000)),
                         float(cfg.get("warmup_ns", 0)))
    _write_json(out / "analysis.json", analysis)
    return analysis


def cmd_simulate(args) -> int:
    cfg = _config(args)
    seed = _seed(args, cfg, required=True)
    base = Path(args.config).parent if args.config else None
    _simulate_one(cfg, seed, Path(args.out), base)
    return EXIT_OK


def _set_path(cfg: dict, dotted: str, value) -> None:
    if "," in dotted:
        # joint axis: "a.x,a.y" takes one list of values per grid point
        keys = [k.strip() for k in dotted.split(",")]
        if not isinstance(value, list) or len(value) != len(keys):
            raise ConfigError(f"grid axis {dotted!r} needs {len(keys)} values per point")
        for k, v in zip(keys, value):
            _set_path(cfg, k, v)
        return
    node = cfg
    parts = dotted.split(".")
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(f"grid key {dotted!r} does not address a mapping")
    node[parts[-1]] = value


def grid_points(grid: dict) -> list:
    """Cartesian product of the grid, first key varying slowest."""
    if not grid:
        raise ConfigError("sweep grid is empty")
    keys = list(grid)
    for k in keys:
        if not isinstance(grid[k], list) or not grid[k]:
            raise ConfigError(f"grid axis {k!r} must be a nonempty list")
    return [dict(zip(keys, combo)) for combo in itertools.product(*(grid[k] for k in keys))]


SWEEP_METRICS = ("sustained_mark_fraction", "mark_fraction", "pauses", "drops",
                 "throughput_gbps")


def cmd_sweep(args) -> int:
    cfg = _config(args)
    seed = _seed(args, cfg, required=True)
    base_dir = Path(args.config).parent if args.config else None
    points = grid_points(cfg.get("grid", {}))
    base = cfg.get("base", {})
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    keys = list(cfg["grid"])
    rows = []
    for i, point in enumerate(points):
        name = f"p{i:03d}"
        point_cfg = copy.deepcopy(base)
        try:
            for k, v in point.items():
                _set_path(point_cfg, k, v)
            result = _simulate_one(point_cfg, seed, out / "points" / name, base_dir)
            rows.append({"point": name, **point, "status": "ok", "error": "",
                         **{m: result[m] for m in SWEEP_METRICS}})
        except RailtwinError as exc:
            rows.append({"point": name, **point, "status": "failed", "error": str(exc),
                         **{m: "" for m in SWEEP_METRICS}})
    # saturated points first, then by marking level, then grid order
    rows.sort(key=lambda r: (r["status"] != "ok",
                             -(r["sustained_mark_fraction"] or 0) if r["status"] == "ok" else 0,
                             -(r["mark_fraction"] or 0) if r["status"] == "ok" else 0,
                             r["point"]))
    buf = io.StringIO()
    writer = csv.DictWriter(buf, ["point", *keys, "status", *SWEEP_METRICS, "error"],
                            lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    (out / "summary.csv").write_text(buf.getvalue())
    return EXIT_OK


# --------------------------------------------------------------------------
# schedule / generate

def cmd_schedule(args) -> int:
    cfg = _config(args)
    seed = _seed(args, cfg, required=False) or 0
    trace_path = args.trace or cfg.get("trace")
    if not trace_path:
        raise ParseError("schedule needs --trace or 'trace' in the config")
    jobs = load_accounting(_existing(trace_path, "trace"))
    if jobs.rejects:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "accounting_rejects.csv").write_text(jobs.rejects_csv())
        for r in jobs.rejects[:20]:
            print(f"accounting: line {r.line}: {r.reason}", file=sys.stderr)
        return EXIT_INPUT
    faults_path = args.faults or cfg.get("faults")
    faults = load_faults(_existing(faults_path, "faults")) if faults_path else []
    policy_data = dict(cfg.get("policy", {}))
    if args.policy:
        policy_data["kind"] = args.policy
    policy = SchedulerPolicy.from_dict(policy_data)
    topo = _topology(cfg)
    trace = list(jobs)
    scale = cfg.get("scale")
    if scale:
        trace = scale_trace(trace, int(scale.get("cluster_nodes", len(topo.nodes))),
                            float(scale["target_load"]))
    outcome = simulate_schedule(trace, topo, policy, faults, seed)
    outcome.write(args.out)
    return EXIT_OK


def cmd_generate(args) -> int:
    cfg = _config(args)
    seed = _seed(args, cfg, required=True)
    gen = cfg.get("generator")
    if gen is None:
        overrides = {k: v for k, v in cfg.items() if k not in ("seed", "job_count")}
        gen_cfg = calibrated_config(job_count=int(cfg.get("job_count", 5000)), seed=seed,
                                    **overrides)
    else:
        gen_cfg = GenConfig.from_dict({**gen, "seed": seed})
    if args.jobs is not None:
        gen_cfg = GenConfig.from_dict({**gen_cfg.to_dict(), "job_count": args.jobs})
    jobs, telemetry = generate_trace(gen_cfg)
    out = Path(args.out)
    write_trace(jobs, telemetry, out)
    _write_json(out / "gen_config.json", gen_cfg.to_dict())
    return EXIT_OK


# --------------------------------------------------------------------------

COMMANDS = {
    "analyze": cmd_analyze,
    "simulate": cmd_simulate,
    "sweep": cmd_sweep,
    "schedule": cmd_schedule,
    "generate": cmd_generate,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="railtwin", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "analyze": "workload metrics from accounting, telemetry and fault logs",
        "simulate": "run one fabric simulation",
        "sweep": "run a parameter grid of fabric simulations",
        "schedule": "replay a job trace through a scheduling policy",
        "generate": "write a synthetic calibrated trace",
    }
    subs = {}
    for name, text in helps.items():
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", help="JSON or YAML config file")
        p.add_argument("--seed", type=int, help="random seed")
        p.add_argument("--out", required=True, help="output directory")
        subs[name] = p
    for name in ("analyze", "schedule"):
        subs[name].add_argument("--trace", help="accounting CSV")
        subs[name].add_argument("--faults", help="fault CSV")
    subs["analyze"].add_argument("--telemetry", help="telemetry CSV")
    subs["analyze"].add_argument("--allow-rejects", action="store_true",
                                 help="analyze valid rows even when some rows are rejected")
    subs["schedule"].add_argument("--policy", choices=["fifo_backfill", "checkpoint_preempt"])
    subs["generate"].add_argument("--jobs", type=int, help="override job_count")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except RailtwinError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN


if __name__ == "__main__":
    sys.exit(main())
