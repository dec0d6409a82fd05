from __future__ import annotations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from railtwin.exceptions import ConfigError
from railtwin.records import FaultEvent, JobRecord, JobState
from railtwin.scheduler import (
    ClusterState,
    PolicyKind,
    SchedulerPolicy,
    apply_fault,
    faults_to_csv,
    find_oversubscription,
    parse_faults,
    placement,
    scale_trace,
    simulate_schedule,
)
from railtwin.topology import TopologyConfig, build_topology

FIFO = SchedulerPolicy(kind="fifo_backfill")
PREEMPT = SchedulerPolicy(kind="checkpoint_preempt")
SMALL = build_topology(TopologyConfig(pods=1, nodes_per_pod=8))
POD32 = build_topology(TopologyConfig(pods=1, nodes_per_pod=32))


def job(job_id, submit, runtime, nodes, ckpt=None, limit=None):
    return JobRecord(job_id, submit, submit, submit + runtime, nodes, 8, "COMPLETED",
                     checkpoint_interval_s=ckpt, time_limit_s=limit)


# -- lifecycle examples --------------------------------------------------

def test_single_job_starts_at_submit(cluster):
    out = simulate_schedule([job("a", 100, 600, 4)], cluster, FIFO)
    a = out.job("a")
    assert a.start == 100 and a.wait_s == 0 and a.end == 700
    assert a.state is JobState.COMPLETED


def _large_and_short():
    large = job("L", 0, 3 * 3600, 32, ckpt=3600)
    short = job("S", 1800, 600, 1)
    return [large, short]


def test_preempt_runs_short_job_at_next_checkpoint():
    out = simulate_schedule(_large_and_short(), POD32, PREEMPT)
    s, big = out.job("S"), out.job("L")
    assert (s.start, s.end) == (3600, 4200)
    assert s.wait_s == 1800
    assert big.preemptions == 1
    # resumes at 70 min plus overhead, no work redone: 3 h + 10 min + 5 min
    assert big.end == 3 * 3600 + 600 + 300
    assert find_oversubscription(out.busy) == []
    # busy timeline of the large job: two segments on every node
    segs = sorted({(s0, e0) for n, j, s0, e0 in out.busy if j == "L"})
    assert segs == [(0, 3600), (4200, 11700)]


def test_fifo_short_job_waits_for_large_job():
    out = simulate_schedule(_large_and_short(), POD32, FIFO)
    s = out.job("S")
    assert s.start == 3 * 3600 and s.wait_s == 9000
    assert out.job("L").preemptions == 0


def test_job_larger_than_cluster_fails_at_submit():
    out = simulate_schedule([job("big", 0, 60, 9)], SMALL, FIFO)
    big = out.job("big")
    assert big.state is JobState.FAILED and big.start is None
    assert "9 nodes" in big.reason


def test_unsorted_trace_rejected(cluster):
    with pytest.raises(ConfigError):
        simulate_schedule([job("a", 10, 1, 1), job("b", 5, 1, 1)], cluster, FIFO)


def test_policy_validation():
    with pytest.raises(ConfigError):
        SchedulerPolicy.from_dict({"kind": "fifo_backfill", "short_job_node_cap": -1})
    with pytest.raises(ConfigError):
        SchedulerPolicy.from_dict({"kind": "lottery"})
    with pytest.raises(ConfigError):
        SchedulerPolicy.from_dict({"fault_terminal_state": "COMPLETED"})
    assert SchedulerPolicy.from_dict({"kind": "checkpoint_preempt"}).kind is PolicyKind.CHECKPOINT_PREEMPT


def test_backfill_uses_time_limit_estimate():
    # head waits for 8 nodes; a 2-node job whose estimate runs past the
    # reservation may not jump ahead, even though it would really finish early
    trace = [job("run", 0, 1000, 7), job("head", 10, 100, 8),
             job("bf", 20, 50, 1, limit=5000)]
    out = simulate_schedule(trace, SMALL, FIFO)
    assert out.job("head").start == 1000
    # "bf" fits in the one spare node only if it ends by 1000
    assert out.job("bf").start >= 1000
    trace[2] = job("bf", 20, 50, 1)
    out = simulate_schedule(trace, SMALL, FIFO)
    assert out.job("bf").start == 20


# -- placement -----------------------------------------------------------

def test_placement_single_pod(cluster):
    free = {f"n{i}" for i in range(50, 54)} | {f"n{i}" for i in range(0, 10)}
    alloc = placement(free, 4, cluster)
    assert alloc.nodes == ("n50", "n51", "n52", "n53") and not alloc.cross_pod


def test_placement_cross_pod(cluster):
    free = {n.node_id for n in cluster.nodes}
    alloc = placement(free, 60, cluster)
    assert alloc.cross_pod and len(alloc.nodes) == 60
    pods = {cluster.node(n).pod for n in alloc.nodes}
    assert pods == {0, 1}


def test_placement_tie_break_lowest_id(cluster):
    assert placement({"n9", "n3"}, 1, cluster).nodes == ("n3",)


def test_placement_insufficient(cluster):
    assert placement({"n1"}, 2, cluster) is None


def test_cross_pod_flag_in_outcome(cluster):
    out = simulate_schedule([job("wide", 0, 60, 60)], cluster, FIFO)
    assert out.job("wide").cross_pod
    row = out.to_csv().splitlines()[1].split(",")
    assert row[6] == "60" and row[8] == "1"


@given(st.sets(st.integers(0, 99), min_size=1), st.integers(1, 100))
def test_placement_properties(cluster_free, request):
    topo = build_topology(TopologyConfig())
    free = {f"n{i}" for i in cluster_free}
    alloc = placement(free, request, topo)
    if request > len(free):
        assert alloc is None
        return
    assert len(set(alloc.nodes)) == request and set(alloc.nodes) <= free
    pods = {topo.node(n).pod for n in alloc.nodes}
    single_possible = any(
        sum(1 for n in free if topo.node(n).pod == p) >= request for p in (0, 1))
    assert alloc.cross_pod == (len(pods) > 1)
    assert alloc.cross_pod == (not single_possible)
    assert alloc == placement(set(sorted(free, reverse=True)), request, topo)


# -- faults --------------------------------------------------------------

def test_gpu_fault_on_idle_node(cluster):
    state = ClusterState(cluster)
    apply_fault(state, FaultEvent(100, "gpu", "n5", recovery_duration_s=600))
    assert state.down_until == {"n5": 700}
    assert "n5" not in state.free_nodes()
    assert state.terminated == []


def test_gpu_fault_terminates_running_job(cluster):
    trace = [job("J", 0, 7200, 4), job("K", 100, 100, 1)]
    fault = FaultEvent(1000, "gpu", "n1", recovery_duration_s=600)
    out = simulate_schedule(trace, cluster, FIFO, faults=[fault])
    j = out.job("J")
    assert j.state is JobState.FAILED and j.end == 1000
    assert "gpu fault on n1" in j.reason
    assert ("n1", 1000, 1600) in out.node_down
    # J's other nodes are freed for later work; n1 is drained
    late = simulate_schedule(trace + [job("M", 1200, 60, 99), job("W", 1300, 60, 100)],
                             cluster, FIFO, faults=[fault])
    assert late.job("M").start == 1200 and "n1" not in late.job("M").nodes
    assert late.job("W").start == 1600
    assert find_oversubscription(late.busy) == []


def test_fault_terminal_state_configurable(cluster):
    policy = SchedulerPolicy(fault_terminal_state="CANCELLED")
    out = simulate_schedule([job("J", 0, 7200, 4)], cluster, policy,
                            faults=[FaultEvent(10, "nic", "n0")])
    assert out.job("J").state is JobState.CANCELLED


def test_leaf_fault_takes_rail_links_down(cluster):
    state = ClusterState(cluster)
    apply_fault(state, FaultEvent(0, "leaf_spine_switch", "leaf3", recovery_duration_s=60))
    touched = [l for l in cluster.links if "leaf3" in (l.a, l.b)]
    assert touched
    assert all(state.link_capacity[l.link_id] == 0 for l in touched)
    assert all(state.link_capacity[l.link_id] > 0 for l in cluster.links if l not in touched)
    # every node keeps running; only rail 3 of pod 0 is cut
    assert state.free_nodes() == {n.node_id for n in cluster.nodes}
    restores = [e for e in state.link_log if e[0] == 60]
    assert len(restores) == len(touched)


@pytest.mark.parametrize("component,target", [
    ("gpu", "n100"), ("leaf_spine_switch", "leaf99"), ("nic", "spine0"),
    ("leaf_spine_switch", "n3"), ("misconfig", "nowhere"),
])
def test_unknown_fault_target(cluster, component, target):
    with pytest.raises(ConfigError):
        apply_fault(ClusterState(cluster), FaultEvent(0, component, target))
    with pytest.raises(ConfigError):
        simulate_schedule([], cluster, FIFO, faults=[FaultEvent(0, component, target)])


def test_fault_component_must_be_known():
    with pytest.raises(ConfigError):
        FaultEvent(0, "psu", "n1")


def test_fault_csv_round_trip():
    text = ("time,component,target,recovery_s,recovery\n"
            "2025-01-02T00:00:00Z,gpu,n3,600,replace\n"
            "10,leaf_spine_switch,leaf1,120,restart\n")
    faults = parse_faults(text)
    assert faults[0].time == 1735776000 and faults[0].recovery.value == "replace"
    assert parse_faults(faults_to_csv(faults)) == faults


# -- properties ----------------------------------------------------------

@st.composite
def traces(draw, max_jobs=14, with_ckpt=True):
    n = draw(st.integers(1, max_jobs))
    t = 0
    out = []
    for i in range(n):
        t += draw(st.integers(0, 400))
        runtime = draw(st.integers(1, 3000))
        nodes = draw(st.integers(1, 8))
        ckpt = draw(st.sampled_from([None, 300, 600])) if with_ckpt else None
        out.append(job(f"j{i}", t, runtime, nodes, ckpt=ckpt))
    return out


def _free_at(out, t):
    busy = {n for n, _, s, e in out.busy if s <= t < e}
    return len(SMALL.nodes) - len(busy)


@settings(max_examples=150)
@given(traces(), st.sampled_from([FIFO, PREEMPT]))
def test_no_oversubscription_and_all_finish(trace, policy):
    out = simulate_schedule(trace, SMALL, policy)
    assert find_oversubscription(out.busy) == []
    for j in out.jobs:
        assert j.state is JobState.COMPLETED
        assert j.start >= j.submit
        # no lost or skipped work
        served = sum(e - s for n, jid, s, e in out.busy if jid == j.job_id) / j.requested_nodes
        assert served >= j.runtime_s


@settings(max_examples=150)
@given(traces())
def test_preempt_only_checkpointed_jobs_and_bounded_delay(trace):
    out = simulate_schedule(trace, SMALL, PREEMPT)
    overhead = PREEMPT.resume_overhead_s
    for j in out.jobs:
        if j.checkpoint_interval_s is None or j.requested_nodes <= PREEMPT.short_job_node_cap:
            assert j.preemptions == 0
        assert j.preemptions <= PREEMPT.max_preemptions_per_job
        added = j.makespan_s - j.runtime_s
        assert added >= 0
        if j.preemptions:
            assert added <= j.preemptions * (j.checkpoint_interval_s + overhead)
        else:
            assert added == 0


@settings(max_examples=150)
@given(traces(with_ckpt=False))
def test_fifo_work_conserving(trace):
    out = simulate_schedule(trace, SMALL, FIFO)
    instants = sorted({j.submit for j in out.jobs} | {j.start for j in out.jobs}
                      | {j.end for j in out.jobs})
    for t in instants:
        waiting = [j for j in out.jobs if j.submit <= t < j.start]
        if waiting:
            head = waiting[0]
            assert _free_at(out, t) < head.requested_nodes
        if all(j.start > t or j.end <= t for j in out.jobs):
            # an idle cluster never leaves anyone queued
            assert not waiting


@settings(max_examples=60)
@given(traces())
def test_simulation_deterministic(trace):
    a = simulate_schedule(trace, SMALL, PREEMPT, seed=3)
    b = simulate_schedule(trace, SMALL, PREEMPT, seed=3)
    assert a.to_csv() == b.to_csv() and a.timeline_csv() == b.timeline_csv()
    assert a.summary() == b.summary()


def test_scale_trace_hits_target_load():
    trace = [job(f"j{i}", i * 1000, 500, 2) for i in range(11)]
    scaled = scale_trace(trace, 10, 0.5)
    span = scaled[-1].submit_ts - scaled[0].submit_ts
    work = sum(j.requested_nodes * j.runtime_s for j in scaled)
    assert work / (10 * span) == pytest.approx(0.5, rel=1e-3)
    assert [j.runtime_s for j in scaled] == [500] * 11
    with pytest.raises(ConfigError):
        scale_trace(trace, 10, 0)


def test_outcome_csv_and_summary(tmp_path):
    out = simulate_schedule(_large_and_short(), POD32, PREEMPT, seed=9)
    out.write(tmp_path)
    header = (tmp_path / "schedule.csv").read_text().splitlines()[0]
    assert header.startswith("job_id,wait_s,start,end,preemptions")
    summary = out.summary()
    assert summary["seed"] == 9 and summary["preemptions"] == 1
    assert summary["mean_wait_short_s"] == 1800
