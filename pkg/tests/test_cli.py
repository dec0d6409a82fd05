from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path

import pytest
import yaml

from railtwin.cli import main

INCAST = {
    "seed": 1,
    "topology": {"pods": 1, "nodes_per_pod": 9},
    "collective": {
        "kind": "incast",
        "participants": [[f"n{i}", 0] for i in range(1, 9)],
        "receiver": ["n0", 0],
        "payload_bytes": 262144,
        "rounds": 2,
    },
    "ecn": {"min_bytes": 2_000_000, "max_bytes": 10_000_000, "p_max": 0.01},
    "sim": {"horizon_ns": 100_000_000},
}


def write_cfg(path, data):
    path.write_text(yaml.safe_dump(data))
    return str(path)


def tree(root):
    """Relative path -> file bytes for every file below ``root``."""
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*"))
            if p.is_file()}


def run_twice(tmp_path, argv):
    """Run a command into two output dirs and return both trees."""
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert main([*argv, "--out", str(out)]) == 0
        outs.append(tree(out))
    return outs


def digest(paths):
    return [hashlib.sha256(open(p, "rb").read()).hexdigest() for p in paths]


# -- analyze ---------------------------------------------------------------

def test_analyze_fixture_deterministic(tmp_path, data_dir):
    argv = ["analyze", "--trace", str(data_dir / "nic_jobs_accounting.csv"),
            "--telemetry", str(data_dir / "nic_jobs_telemetry.csv"),
            "--faults", str(data_dir / "faults_21.csv")]
    inputs = [data_dir / n for n in ("nic_jobs_accounting.csv", "nic_jobs_telemetry.csv",
                                     "faults_21.csv")]
    before = digest(inputs)
    a, b = run_twice(tmp_path, argv)
    assert a == b
    assert digest(inputs) == before
    rows = list(csv.DictReader(a["nic_peaks.csv"].decode().splitlines()))
    assert [r["imbalanced"] for r in rows] == ["0", "1"]
    assert json.loads(a["report.json"])["faults"]["monthly"] == {
        "2025-01": 13, "2025-02": 5, "2025-03": 3}


def test_analyze_empty_trace(tmp_path):
    trace = tmp_path / "empty.csv"
    trace.write_text("job_id,submit_ts,start_ts,end_ts,state,nodes,gpus_per_node\n")
    out = tmp_path / "out"
    assert main(["analyze", "--trace", str(trace), "--out", str(out)]) == 0
    assert (out / "state_dist.csv").read_text() == "state,count,count_share,gpu_hours,gpu_time_share\n"
    report = json.loads((out / "report.json").read_text())
    assert report["headline"]["cancelled_gpu_time_share"] is None


def test_analyze_corrupt_csv(tmp_path, capsys):
    trace = tmp_path / "bad.csv"
    trace.write_text("job_id,submit_ts,start_ts,end_ts,state,nodes,gpus_per_node\n"
                     "a,0,0,10,COMPLETED,1,8\n"
                     "b,0,x,10,COMPLETED,1,8\n"
                     "c,0,20,10,COMPLETED,1,8\n")
    out = tmp_path / "out"
    assert main(["analyze", "--trace", str(trace), "--out", str(out)]) == 2
    err = capsys.readouterr().err
    assert "line 3" in err and "line 4" in err
    rejects = list(csv.DictReader((out / "accounting_rejects.csv").open()))
    assert [r["line"] for r in rejects] == ["3", "4"]
    assert not (out / "report.json").exists()
    assert main(["analyze", "--trace", str(trace), "--out", str(out), "--allow-rejects"]) == 0
    report = json.loads((out / "report.json").read_text())
    assert report["rejects"] == {"accounting": 2}
    assert report["state_dist"]["COMPLETED"]["count"] == 1


def test_analyze_missing_column_and_file(tmp_path):
    trace = tmp_path / "t.csv"
    trace.write_text("job_id,submit_ts\n")
    assert main(["analyze", "--trace", str(trace), "--out", str(tmp_path / "o")]) == 2
    assert main(["analyze", "--trace", str(tmp_path / "nope.csv"),
                 "--out", str(tmp_path / "o")]) == 2


# -- simulate and sweep ----------------------------------------------------------

def test_simulate_deterministic(tmp_path):
    cfg = write_cfg(tmp_path / "sim.yaml", INCAST)
    a, b = run_twice(tmp_path, ["simulate", "--config", cfg])
    assert a == b
    assert {"sim_summary.json", "port_series.csv", "flow_series.csv", "flows.csv",
            "analysis.json"} <= set(a)
    analysis = json.loads(a["analysis.json"])
    assert analysis["drops"] == 0 and analysis["completed_flows"] == 16


def test_simulate_seed_flag_overrides_config(tmp_path):
    cfg = write_cfg(tmp_path / "sim.yaml", {k: v for k, v in INCAST.items() if k != "seed"})
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
    assert main(["simulate", "--config", cfg, "--seed", "3", "--out", str(tmp_path / "o")]) == 0


def test_simulate_zero_flows(tmp_path):
    cfg = write_cfg(tmp_path / "sim.yaml", {"seed": 0, "flows": [],
                                            "topology": {"pods": 1, "nodes_per_pod": 2}})
    out = tmp_path / "o"
    assert main(["simulate", "--config", cfg, "--out", str(out)]) == 0
    analysis = json.loads((out / "analysis.json").read_text())
    assert analysis["flows"] == 0 and analysis["drops"] == 0


def test_simulate_unroutable(tmp_path, capsys):
    flows = [{"flow_id": "f", "src": ["n0", 0], "dst": ["n7", 0], "size_bytes": 1000}]
    cfg = write_cfg(tmp_path / "sim.yaml", {"seed": 0, "flows": flows,
                                            "topology": {"pods": 1, "nodes_per_pod": 2}})
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "o")]) == 1
    assert "error" in capsys.readouterr().err


def test_sweep_four_points(tmp_path):
    base = {k: v for k, v in INCAST.items() if k not in ("seed", "ecn")}
    cfg = write_cfg(tmp_path / "sweep.yaml", {
        "seed": 2, "base": base,
        "grid": {"ecn.min_bytes,ecn.max_bytes": [[100_000, 100_000], [2_000_000, 10_000_000]],
                 "ecn.p_max": [0.01, 0.1]},
    })
    a, b = run_twice(tmp_path, ["sweep", "--config", cfg])
    assert a == b
    rows = list(csv.DictReader(a["summary.csv"].decode().splitlines()))
    assert sorted(r["point"] for r in rows) == ["p000", "p001", "p002", "p003"]
    assert all(r["status"] == "ok" for r in rows)
    assert sum(1 for k in a if k.endswith("analysis.json")) == 4
    # the under-provisioned thresholds lead, sorted by sustained marking
    marks = [float(r["sustained_mark_fraction"]) for r in rows]
    assert marks == sorted(marks, reverse=True)
    assert rows[0]["ecn.min_bytes,ecn.max_bytes"] == "[100000, 100000]"


def test_sweep_failing_point_noted(tmp_path):
    base = {k: v for k, v in INCAST.items() if k not in ("seed", "ecn")}
    cfg = write_cfg(tmp_path / "sweep.yaml", {
        "seed": 2, "base": base, "grid": {"ecn.p_max": [0.01, 7.0]}})
    out = tmp_path / "o"
    assert main(["sweep", "--config", cfg, "--out", str(out)]) == 0
    rows = list(csv.DictReader((out / "summary.csv").open()))
    assert [r["status"] for r in rows] == ["ok", "failed"]
    assert rows[1]["error"]


def test_sweep_empty_grid(tmp_path):
    cfg = write_cfg(tmp_path / "sweep.yaml", {"seed": 1, "base": INCAST, "grid": {}})
    assert main(["sweep", "--config", cfg, "--out", str(tmp_path / "o")]) == 1


# -- schedule and generate ---------------------------------------------------------

def _schedule_inputs(tmp_path):
    trace = tmp_path / "trace.csv"
    trace.write_text("job_id,submit_ts,start_ts,end_ts,state,nodes,gpus_per_node,"
                     "checkpoint_interval_s\n"
                     "L,0,0,10800,COMPLETED,32,8,3600\n"
                     "S,1800,1800,2400,COMPLETED,1,8,\n")
    cfg = write_cfg(tmp_path / "sched.yaml", {"topology": {"pods": 1, "nodes_per_pod": 32}})
    return str(trace), cfg


@pytest.mark.parametrize("policy,short_start", [("checkpoint_preempt", "3600"),
                                                ("fifo_backfill", "10800")])
def test_schedule_hand_traced(tmp_path, policy, short_start):
    trace, cfg = _schedule_inputs(tmp_path)
    a, b = run_twice(tmp_path, ["schedule", "--trace", trace, "--config", cfg,
                                "--policy", policy, "--seed", "4"])
    assert a == b
    rows = {r["job_id"]: r for r in csv.DictReader(a["schedule.csv"].decode().splitlines())}
    assert rows["S"]["start"] == short_start
    summary = json.loads(a["schedule_summary.json"])
    assert summary["policy"] == policy and summary["seed"] == 4


def test_schedule_single_job_and_oversized(tmp_path):
    trace = tmp_path / "trace.csv"
    trace.write_text("job_id,submit_ts,start_ts,end_ts,state,nodes,gpus_per_node\n"
                     "one,50,50,80,COMPLETED,1,8\nhuge,60,60,90,COMPLETED,500,8\n")
    out = tmp_path / "o"
    assert main(["schedule", "--trace", str(trace), "--out", str(out)]) == 0
    rows = {r["job_id"]: r for r in csv.DictReader((out / "schedule.csv").open())}
    assert rows["one"]["wait_s"] == "0"
    assert rows["huge"]["state"] == "FAILED" and "500" in rows["huge"]["reason"]


def test_schedule_bad_fault_target(tmp_path):
    trace, cfg = _schedule_inputs(tmp_path)
    faults = tmp_path / "f.csv"
    faults.write_text("time,component,target,recovery_s\n10,gpu,n999,60\n")
    assert main(["schedule", "--trace", trace, "--config", cfg, "--faults", str(faults),
                 "--out", str(tmp_path / "o")]) == 1


def test_generate_then_analyze(tmp_path):
    a, b = run_twice(tmp_path, ["generate", "--seed", "3", "--jobs", "150"])
    assert a == b
    assert set(a) == {"accounting.csv", "telemetry.csv", "gen_config.json"}
    assert len(a["accounting.csv"].decode().splitlines()) == 151
    out = tmp_path / "report"
    assert main(["analyze", "--trace", str(tmp_path / "a" / "accounting.csv"),
                 "--telemetry", str(tmp_path / "a" / "telemetry.csv"), "--out", str(out)]) == 0
    util = list(csv.DictReader((out / "util_by_bucket.csv").open()))
    assert sum(int(r["jobs"]) for r in util) == 150


def test_generate_needs_seed(tmp_path):
    assert main(["generate", "--jobs", "5", "--out", str(tmp_path / "o")]) == 2


def test_shipped_configs_parse(tmp_path):
    root = Path(__file__).parent.parent / "configs"
    for name in ("incast_default.yaml", "incast_underprovisioned.yaml", "sweep_ecn.yaml",
                 "fairness.yaml", "schedule_preempt.yaml", "generate.yaml"):
        data = yaml.safe_load((root / name).read_text())
        assert isinstance(data, dict) and data
        if name != "schedule_preempt.yaml":
            # every stochastic command carries its seed
            assert isinstance(data["seed"], int)


@pytest.mark.parametrize("argv", [["bogus"], ["simulate"], ["analyze", "--out"],
                                  ["generate", "--seed", "x", "--out", "o"]])
def test_argument_errors_exit_2(argv):
    with pytest.raises(SystemExit) as exc:
        main(argv)
    assert exc.value.code == 2
