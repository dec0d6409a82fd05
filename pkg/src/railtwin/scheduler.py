"""Trace-driven scheduler simulation.

Jobs are replayed from their trace submit times and runtimes onto a
:class:`ClusterTopology`.  Two policies are supported:

``fifo_backfill``
    EASY backfill: jobs start in submit order; when the queue head does not
    fit, it gets a reservation at the earliest time enough nodes free up, and
    later jobs may jump ahead only if they do not delay that reservation.
    Runtime estimates come from ``time_limit_s`` when present, otherwise the
    trace runtime is used as an (optimistic) oracle estimate.

``checkpoint_preempt``
    ``fifo_backfill`` plus checkpoint-time preemption: when a running job
    larger than ``short_job_node_cap`` completes a checkpoint while short jobs
    are waiting, it is suspended, short jobs that fit inside one checkpoint
    interval run on its nodes, and it resumes on the same nodes once they are
    done, paying ``resume_overhead_s``.  Progress is never lost because
    suspension only happens at checkpoint instants.

Times are seconds.
"""

from __future__ import annotations

import csv
import enum
import heapq
import io
import json
from collections import defaultdict
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from ._validation import check_count, check_nonnegative
from .exceptions import ConfigError, ParseError, RailtwinError
from .records import (
    DEFAULT_RECOVERY_S,
    NODE_COMPONENTS,
    FaultComponent,
    FaultEvent,
    JobRecord,
    JobState,
    RecoveryKind,
    bucket_of,
)
from .topology import ClusterTopology, node_index, split_vertex


class PolicyKind(str, enum.Enum):
    FIFO_BACKFILL = "fifo_backfill"
    CHECKPOINT_PREEMPT = "checkpoint_preempt"


@dataclass(frozen=True)
class SchedulerPolicy:
    kind: PolicyKind = PolicyKind.FIFO_BACKFILL
    short_job_node_cap: int = 2
    max_preemptions_per_job: int = 3
    resume_overhead_s: float = 300.0
    fault_terminal_state: JobState = JobState.FAILED

    def __post_init__(self):
        object.__setattr__(self, "kind", PolicyKind(self.kind))
        object.__setattr__(self, "fault_terminal_state", JobState(self.fault_terminal_state))

    def check(self) -> None:
        check_count("short_job_node_cap", self.short_job_node_cap, minimum=0)
        check_count("max_preemptions_per_job", self.max_preemptions_per_job, minimum=0)
        check_nonnegative("resume_overhead_s", self.resume_overhead_s)
        if self.fault_terminal_state not in (JobState.FAILED, JobState.CANCELLED):
            raise ConfigError("fault_terminal_state must be FAILED or CANCELLED")

    @classmethod
    def from_dict(cls, data: dict) -> "SchedulerPolicy":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown policy fields: {sorted(unknown)}")
        try:
            policy = cls(**data)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        policy.check()
        return policy


# --------------------------------------------------------------------------
# placement

@dataclass(frozen=True)
class Allocation:
    nodes: tuple
    cross_pod: bool


def _by_id(nodes):
    return sorted(nodes, key=node_index)


def placement(free_nodes, request: int, topo: ClusterTopology) -> Allocation | None:
    """Pick ``request`` nodes out of ``free_nodes``.

    A single pod is preferred, choosing the pod that is left with the fewest
    free nodes (best fit, ties to the lower pod).  Otherwise pods are filled
    largest-first so the job spans as few pods as possible.  Within a pod the
    lowest node ids win.
    """
    free = set(free_nodes)
    if request < 1 or len(free) < request:
        return None
    per_pod = defaultdict(list)
    for n in free:
        per_pod[topo.node(n).pod].append(n)
    fits = [p for p in per_pod if len(per_pod[p]) >= request]
    if fits:
        pod = min(fits, key=lambda p: (len(per_pod[p]), p))
        return Allocation(tuple(_by_id(per_pod[pod])[:request]), False)
    chosen = []
    for pod in sorted(per_pod, key=lambda p: (-len(per_pod[p]), p)):
        chosen.extend(_by_id(per_pod[pod])[:request - len(chosen)])
        if len(chosen) == request:
            break
    return Allocation(tuple(_by_id(chosen)), True)


# --------------------------------------------------------------------------
# cluster state and faults

@dataclass
class ClusterState:
    """Mutable node/link availability.

    ``owner`` maps a node to the job holding it (running or suspended with a
    reservation); ``down_until`` holds drained nodes.
    """

    topo: ClusterTopology
    owner: dict = field(default_factory=dict)
    down_until: dict = field(default_factory=dict)
    link_capacity: dict = field(default_factory=dict)
    job_nodes: dict = field(default_factory=dict)
    terminated: list = field(default_factory=list)
    link_log: list = field(default_factory=list)
    drain_log: list = field(default_factory=list)

    def __post_init__(self):
        if not self.link_capacity:
            self.link_capacity = {l.link_id: l.capacity_gbps for l in self.topo.links}

    def free_nodes(self) -> set:
        return {n.node_id for n in self.topo.nodes
                if n.node_id not in self.owner and n.node_id not in self.down_until}

    def assign(self, job_id: str, nodes) -> None:
        for n in nodes:
            if n in self.owner or n in self.down_until:
                raise RailtwinError(f"node {n} is not free for job {job_id}")
            self.owner[n] = job_id
        self.job_nodes[job_id] = tuple(nodes)

    def release(self, job_id: str) -> tuple:
        nodes = self.job_nodes.pop(job_id, ())
        for n in nodes:
            if self.owner.get(n) == job_id:
                del self.owner[n]
        return nodes


def fault_nodes(topo: ClusterTopology, fault: FaultEvent) -> list:
    """Compute nodes a fault drains; empty for switch faults."""
    target = fault.target
    split = split_vertex(target)
    if split is not None:
        target = split[0]
    if topo.has_node(target):
        if fault.component in (FaultComponent.LEAF_SPINE_SWITCH, FaultComponent.STORAGE_SWITCH):
            raise ConfigError(f"{fault.component.value} fault targets node {target}")
        return [target]
    if fault.component in NODE_COMPONENTS:
        raise ConfigError(f"unknown node {fault.target!r} for {fault.component.value} fault")
    return []


def _fault_links(topo: ClusterTopology, fault: FaultEvent) -> list:
    target = fault.target
    if topo.has_switch(target):
        if fault.component not in (FaultComponent.LEAF_SPINE_SWITCH, FaultComponent.MISCONFIG):
            raise ConfigError(f"{fault.component.value} fault targets switch {target}")
        return [l.link_id for l in topo.links if target in (l.a, l.b)]
    if fault.component is FaultComponent.STORAGE_SWITCH and target.startswith("storage"):
        return []  # storage fabric is outside the compute topology
    if fault.component is FaultComponent.LEAF_SPINE_SWITCH:
        raise ConfigError(f"unknown switch {target!r}")
    raise ConfigError(f"unknown fault target {target!r}")


def apply_fault(state: ClusterState, fault: FaultEvent) -> ClusterState:
    """Apply ``fault`` at ``fault.time``.

    Node faults drain the node until ``time + recovery_duration_s``; any job
    holding the node is appended to ``state.terminated``.  Switch faults set
    every link touching the switch to capacity 0 for the same duration.
    """
    until = fault.time + fault.recovery_duration_s
    nodes = fault_nodes(state.topo, fault)
    if nodes:
        for n in nodes:
            job = state.owner.get(n)
            if job is not None and job not in state.terminated:
                state.terminated.append(job)
            state.down_until[n] = max(until, state.down_until.get(n, until))
            state.drain_log.append((n, fault.time, until))
        return state
    for link_id in _fault_links(state.topo, fault):
        state.link_capacity[link_id] = 0.0
        state.link_log.append((fault.time, link_id, 0.0))
        state.link_log.append((until, link_id, state.topo.link(link_id).capacity_gbps))
    return state


def _parse_time(text: str) -> float:
    text = text.strip()
    try:
        return float(text)
    except ValueError:
        pass
    stamp = datetime.fromisoformat(text.replace("Z", "+00:00"))
    if stamp.tzinfo is None:
        stamp = stamp.replace(tzinfo=timezone.utc)
    return stamp.timestamp()


FAULT_COLUMNS = ("time", "component", "target", "recovery_s")


def parse_faults(text: str, source: str = "<faults>") -> list:
    """Fault script CSV: time, component, target, recovery_s[, recovery]."""
    reader = csv.DictReader(io.StringIO(text))
    missing = [c for c in FAULT_COLUMNS if c not in (reader.fieldnames or ())]
    if missing:
        raise ParseError(f"{source}: missing column {missing[0]!r}")
    out = []
    for lineno, row in enumerate(reader, start=2):
        try:
            recovery_s = row["recovery_s"].strip()
            out.append(FaultEvent(
                time=_parse_time(row["time"]),
                component=row["component"].strip(),
                target=row["target"].strip(),
                recovery=(row.get("recovery") or RecoveryKind.RESTART.value).strip(),
                recovery_duration_s=float(recovery_s) if recovery_s else DEFAULT_RECOVERY_S,
            ))
        except (ValueError, ConfigError, AttributeError) as exc:
            raise ParseError(f"{source}:{lineno}: {exc}") from None
    return out


def load_faults(path) -> list:
    return parse_faults(Path(path).read_text(encoding="utf-8"), str(path))


def faults_to_csv(faults) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(FAULT_COLUMNS + ("recovery",))
    for f in faults:
        writer.writerow((_num(f.time), f.component.value, f.target,
                         _num(f.recovery_duration_s), f.recovery.value))
    return buf.getvalue()


def _num(x):
    return int(x) if float(x).is_integer() else x


# --------------------------------------------------------------------------
# outcome

@dataclass
class JobOutcome:
    job_id: str
    submit: float
    start: float | None
    end: float | None
    wait_s: float | None
    preemptions: int
    state: JobState
    requested_nodes: int
    runtime_s: float | None
    nodes: tuple = ()
    cross_pod: bool = False
    reason: str = ""
    checkpoint_interval_s: float | None = None

    @property
    def makespan_s(self) -> float | None:
        if self.start is None or self.end is None:
            return None
        return self.end - self.start


@dataclass
class ScheduleOutcome:
    policy: SchedulerPolicy
    jobs: list
    busy: list  # (node, job_id, start, end)
    node_down: list  # (node, start, end)
    link_events: list  # (t, link_id, capacity_gbps)
    seed: int = 0

    CSV_COLUMNS = ("job_id", "wait_s", "start", "end", "preemptions", "state",
                   "requested_nodes", "nodes", "cross_pod", "reason")

    def job(self, job_id: str) -> JobOutcome:
        for j in self.jobs:
            if j.job_id == job_id:
                return j
        raise KeyError(job_id)

    def mean_wait(self, max_nodes: int | None = None) -> float | None:
        waits = [j.wait_s for j in self.jobs if j.wait_s is not None
                 and (max_nodes is None or j.requested_nodes <= max_nodes)]
        return sum(waits) / len(waits) if waits else None

    def summary(self) -> dict:
        started = [j for j in self.jobs if j.start is not None]
        states = defaultdict(int)
        for j in self.jobs:
            states[j.state.value] += 1
        by_bucket = defaultdict(list)
        for j in started:
            by_bucket[bucket_of(j.requested_nodes) or "other"].append(j.wait_s)
        cap = self.policy.short_job_node_cap
        return {
            "policy": self.policy.kind.value,
            "short_job_node_cap": cap,
            "resume_overhead_s": self.policy.resume_overhead_s,
            "seed": self.seed,
            "jobs": len(self.jobs),
            "started": len(started),
            "states": dict(sorted(states.items())),
            "mean_wait_s": self.mean_wait(),
            "mean_wait_short_s": self.mean_wait(cap),
            "mean_wait_by_bucket_s": {k: sum(v) / len(v) for k, v in sorted(by_bucket.items())},
            "preemptions": sum(j.preemptions for j in self.jobs),
            "preempted_jobs": sum(1 for j in self.jobs if j.preemptions),
            "cross_pod_jobs": sum(1 for j in started if j.cross_pod),
            "makespan_s": (max(j.end for j in started if j.end is not None)
                           - min(j.submit for j in self.jobs)) if started else 0,
            "node_drains": len(self.node_down),
            "link_events": len(self.link_events),
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.CSV_COLUMNS)
        for j in self.jobs:
            writer.writerow((
                j.job_id, _opt(j.wait_s), _opt(j.start), _opt(j.end), j.preemptions,
                j.state.value, j.requested_nodes, ";".join(j.nodes), int(j.cross_pod), j.reason,
            ))
        return buf.getvalue()

    def timeline_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(("node", "job_id", "start", "end"))
        for row in self.busy:
            writer.writerow((row[0], row[1], _num(row[2]), _num(row[3])))
        return buf.getvalue()

    def write(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "schedule.csv").write_text(self.to_csv())
        (out / "node_timeline.csv").write_text(self.timeline_csv())
        (out / "schedule_summary.json").write_text(
            json.dumps(self.summary(), indent=2, sort_keys=True) + "\n")


def _opt(x):
    return "" if x is None else _num(x)


def find_oversubscription(busy) -> list:
    """Overlapping (node, job_a, job_b) busy intervals; empty when sound."""
    per_node = defaultdict(list)
    for node, job, start, end in busy:
        per_node[node].append((start, end, job))
    clashes = []
    for node, spans in per_node.items():
        spans.sort()
        for (s0, e0, j0), (s1, e1, j1) in zip(spans, spans[1:]):
            if s1 < e0:
                clashes.append((node, j0, j1))
    return clashes


# --------------------------------------------------------------------------
# simulation

_FINISH, _RESUME, _RECOVER, _FAULT, _CHECKPOINT, _SUBMIT = range(6)


class _Job:
    __slots__ = ("rec", "order", "runtime", "estimate", "status", "nodes", "cross_pod",
                 "first_start", "end", "progress", "seg_start", "seg_open", "gen",
                 "preemptions", "reason", "state", "host", "guests", "window_end", "ckpt_k")

    def __init__(self, rec: JobRecord, order: int):
        self.rec = rec
        self.order = order
        self.runtime = rec.runtime_s
        est = rec.time_limit_s if rec.time_limit_s is not None else self.runtime
        self.estimate = max(est or 0, self.runtime or 0)
        self.status = "new"
        self.nodes = ()
        self.cross_pod = False
        self.first_start = None
        self.end = None
        self.progress = 0.0  # work done before the current segment
        self.seg_start = None  # when work resumes in the current segment
        self.seg_open = None  # when the current segment took the nodes
        self.gen = 0
        self.preemptions = 0
        self.reason = ""
        self.state = rec.state
        self.host = None  # job whose reserved nodes this one borrows
        self.guests = []
        self.window_end = None
        self.ckpt_k = 0  # checkpoints completed, counted in progress terms


class _Sim:
    def __init__(self, trace, topo, policy, faults, seed):
        self.topo = topo
        self.policy = policy
        self.seed = seed
        self.state = ClusterState(topo)
        self.jobs = [_Job(rec, i) for i, rec in enumerate(trace)]
        self.by_id = {j.rec.job_id: j for j in self.jobs}
        if len(self.by_id) != len(self.jobs):
            raise ConfigError("duplicate job_id in trace")
        self.cluster_size = len(topo.nodes)
        self.heap = []
        self.seq = 0
        self.queue = []  # waiting jobs in submit order
        self.busy = []
        self.now = 0.0
        for j in self.jobs:
            self.push(j.rec.submit_ts, _SUBMIT, j)
        for f in sorted(faults, key=lambda f: f.time):
            # validate targets up front so a bad script fails before running
            fault_nodes(topo, f) or _fault_links(topo, f)
            self.push(f.time, _FAULT, f)

    def push(self, t, kind, obj, gen=None):
        self.seq += 1
        heapq.heappush(self.heap, (t, kind, self.seq, obj, gen))

    # -- event loop -------------------------------------------------------
    def run(self) -> ScheduleOutcome:
        while self.heap:
            t = self.heap[0][0]
            self.now = t
            checkpoints = []
            while self.heap and self.heap[0][0] == t:
                _, kind, _, obj, gen = heapq.heappop(self.heap)
                if kind == _SUBMIT:
                    self.on_submit(obj)
                elif kind == _FINISH:
                    if gen == obj.gen and obj.status == "running":
                        self.finish(obj, obj.state, "")
                elif kind == _RESUME:
                    if gen == obj.gen and obj.status == "suspended":
                        self.resume(obj)
                elif kind == _RECOVER:
                    if self.state.down_until.get(obj) == t:
                        del self.state.down_until[obj]
                elif kind == _FAULT:
                    self.on_fault(obj)
                elif kind == _CHECKPOINT:
                    if gen == obj.gen and obj.status == "running":
                        obj.ckpt_k += 1
                        checkpoints.append(obj)
                        self.schedule_checkpoint(obj)
            self.schedule_pass()
            if self.policy.kind is PolicyKind.CHECKPOINT_PREEMPT:
                for job in sorted(checkpoints, key=lambda j: j.order):
                    if job.status == "running":
                        self.try_preempt(job)
        for j in self.jobs:
            if j.status == "waiting":
                j.reason = j.reason or "never scheduled"
        return self.outcome()

    def on_submit(self, job):
        rec = job.rec
        if rec.requested_nodes > self.cluster_size:
            job.status = "rejected"
            job.state = JobState.FAILED
            job.reason = (f"requests {rec.requested_nodes} nodes, "
                          f"cluster has {self.cluster_size}")
            return
        if job.runtime is None or rec.start_ts is None:
            job.status = "skipped"
            job.reason = "no runtime in trace"
            return
        job.status = "waiting"
        self.queue.append(job)

    # -- starting and stopping ------------------------------------------
    def start(self, job, alloc: Allocation, host=None):
        self.queue.remove(job)
        job.status = "running"
        job.nodes = alloc.nodes
        job.cross_pod = alloc.cross_pod
        job.first_start = self.now
        job.seg_open = self.now
        job.seg_start = self.now
        if host is None:
            self.state.assign(job.rec.job_id, alloc.nodes)
        else:
            job.host = host
            host.guests.append(job)
            for n in alloc.nodes:
                self.state.owner[n] = job.rec.job_id
        self.arm(job)

    def arm(self, job):
        job.gen += 1
        remaining = job.runtime - job.progress
        self.push(job.seg_start + remaining, _FINISH, job, job.gen)
        self.schedule_checkpoint(job)

    def schedule_checkpoint(self, job):
        interval = job.rec.checkpoint_interval_s
        if not interval or self.policy.kind is not PolicyKind.CHECKPOINT_PREEMPT:
            return
        target = (job.ckpt_k + 1) * interval
        if target < job.runtime:
            self.push(job.seg_start + (target - job.progress), _CHECKPOINT, job, job.gen)

    def close_segment(self, job):
        if job.seg_open is not None and self.now > job.seg_open:
            for n in job.nodes:
                self.busy.append((n, job.rec.job_id, job.seg_open, self.now))
        job.seg_open = None

    def finish(self, job, state, reason):
        self.close_segment(job)
        job.status = "done"
        job.end = self.now
        job.state = state
        if reason:
            job.reason = reason
        job.gen += 1
        host = job.host
        if host is not None:
            host.guests.remove(job)
            for n in job.nodes:
                if self.state.owner.get(n) == job.rec.job_id:
                    if host.status == "suspended":
                        self.state.owner[n] = host.rec.job_id
                    else:
                        del self.state.owner[n]
        else:
            self.state.release(job.rec.job_id)
        if job.status == "done" and job.guests:
            # a suspended host died: its guests keep their nodes outright
            for g in job.guests:
                g.host = None
                self.state.job_nodes[g.rec.job_id] = g.nodes
            job.guests = []

    # -- checkpoint preemption ------------------------------------------
    def try_preempt(self, job):
        pol = self.policy
        interval = job.rec.checkpoint_interval_s
        if (not interval or job.rec.requested_nodes <= pol.short_job_node_cap
                or job.preemptions >= pol.max_preemptions_per_job or job.host is not None):
            return
        if job.progress + (self.now - job.seg_start) >= job.runtime:
            return
        capacity = len(job.nodes)
        chosen = []
        for cand in self.queue:
            need = cand.rec.requested_nodes
            if (need <= pol.short_job_node_cap and need <= capacity
                    and cand.estimate <= interval):
                chosen.append(cand)
                capacity -= need
        if not chosen:
            return
        # suspend at the checkpoint: no progress is lost
        self.close_segment(job)
        job.progress = job.ckpt_k * interval
        job.status = "suspended"
        job.preemptions += 1
        job.gen += 1
        spare = sorted(job.nodes, key=node_index)
        window_end = self.now
        for cand in chosen:
            take = tuple(spare[:cand.rec.requested_nodes])
            spare = spare[cand.rec.requested_nodes:]
            self.start(cand, Allocation(take, False), host=job)
            window_end = max(window_end, self.now + cand.runtime)
        job.window_end = window_end
        self.push(window_end, _RESUME, job, job.gen)

    def resume(self, job):
        for g in list(job.guests):
            # guests were sized to end by window_end; anything left is evicted
            self.finish(g, self.policy.fault_terminal_state, "evicted at host resume")
        for n in job.nodes:
            self.state.owner[n] = job.rec.job_id
        job.status = "running"
        job.seg_open = self.now
        job.seg_start = self.now + self.policy.resume_overhead_s
        self.arm(job)

    # -- faults -----------------------------------------------------------
    def on_fault(self, fault):
        apply_fault(self.state, fault)
        for n in fault_nodes(self.topo, fault):
            self.push(self.state.down_until[n], _RECOVER, n)
        hit = self.state.terminated
        self.state.terminated = []
        reason = f"{fault.component.value} fault on {fault.target}"
        for job_id in hit:
            job = self.by_id[job_id]
            if job.status == "done":
                continue
            if job.host is not None and job.host.status == "suspended":
                # the fault also breaks the host's reservation
                host = job.host
                self.finish(job, self.policy.fault_terminal_state, reason)
                self.finish(host, self.policy.fault_terminal_state, reason)
            else:
                self.finish(job, self.policy.fault_terminal_state, reason)
        for n in fault_nodes(self.topo, fault):
            self.state.owner.pop(n, None)

    # -- scheduling pass ----------------------------------------------
    def shadow(self, head, free_count):
        """Earliest time the head fits, and nodes spare at that time."""
        releases = []
        for job in self.jobs:
            if job.status == "running" and job.host is None:
                releases.append((job.seg_start + job.estimate - job.progress, len(job.nodes)))
            elif job.status == "suspended":
                end = job.window_end + self.policy.resume_overhead_s + job.estimate - job.progress
                releases.append((end, len(job.nodes)))
        for n, until in self.state.down_until.items():
            if n not in self.state.owner:
                releases.append((until, 1))
        releases.sort()
        avail = free_count
        need = head.rec.requested_nodes
        for t, count in releases:
            avail += count
            if avail >= need:
                return max(t, self.now), avail - need
        return float("inf"), 0

    def schedule_pass(self):
        if not self.queue:
            return
        free = self.state.free_nodes()
        # start jobs in order while the head fits
        while self.queue:
            head = self.queue[0]
            alloc = placement(free, head.rec.requested_nodes, self.topo)
            if alloc is None:
                break
            self.start(head, alloc)
            free -= set(alloc.nodes)
        if not self.queue:
            return
        head = self.queue[0]
        shadow, extra = self.shadow(head, len(free))
        for job in list(self.queue[1:]):
            need = job.rec.requested_nodes
            if need > len(free):
                continue
            ends_in_time = self.now + job.estimate <= shadow
            if not ends_in_time and need > extra:
                continue
            alloc = placement(free, need, self.topo)
            self.start(job, alloc)
            free -= set(alloc.nodes)
            if not ends_in_time:
                extra -= need
            if not free:
                break

    # -- results ----------------------------------------------------------
    def outcome(self) -> ScheduleOutcome:
        rows = []
        for j in self.jobs:
            wait = None if j.first_start is None else j.first_start - j.rec.submit_ts
            state = j.state
            if j.status == "waiting":
                state = JobState.PENDING
            rows.append(JobOutcome(
                job_id=j.rec.job_id, submit=j.rec.submit_ts, start=j.first_start, end=j.end,
                wait_s=wait, preemptions=j.preemptions, state=state,
                requested_nodes=j.rec.requested_nodes, runtime_s=j.runtime,
                nodes=tuple(j.nodes), cross_pod=j.cross_pod, reason=j.reason,
                checkpoint_interval_s=j.rec.checkpoint_interval_s,
            ))
        return ScheduleOutcome(
            policy=self.policy, jobs=rows, busy=sorted(self.busy, key=_busy_key),
            node_down=list(self.state.drain_log), link_events=list(self.state.link_log),
            seed=self.seed,
        )


def _busy_key(row):
    return (node_index(row[0]), row[2], row[1])


def simulate_schedule(trace, topo: ClusterTopology, policy: SchedulerPolicy | None = None,
                      faults=(), seed: int = 0) -> ScheduleOutcome:
    """Replay ``trace`` (sorted by submit time) under ``policy``.

    The simulation is deterministic; ``seed`` is recorded in the summary for
    run bookkeeping.
    """
    policy = policy or SchedulerPolicy()
    policy.check()
    trace = list(trace)
    if any(b.submit_ts < a.submit_ts for a, b in zip(trace, trace[1:])):
        raise ConfigError("trace must be sorted by submit_ts")
    return _Sim(trace, topo, policy, list(faults), seed).run()


def scale_trace(trace, cluster_nodes: int, target_load: float) -> list:
    """Rescale submit times so the offered load is ``target_load``.

    Offered load is node-seconds requested over ``cluster_nodes`` times the
    submission span.  Jobs keep their runtimes and order; requests above the
    cluster size are clipped to it.
    """
    if not 0 < target_load:
        raise ConfigError("target_load must be > 0")
    trace = [j for j in trace if j.runtime_s is not None]
    if len(trace) < 2:
        return list(trace)
    t0 = trace[0].submit_ts
    span = trace[-1].submit_ts - t0
    work = sum(min(j.requested_nodes, cluster_nodes) * j.runtime_s for j in trace)
    if span <= 0 or work <= 0:
        return list(trace)
    factor = work / (cluster_nodes * target_load * span)
    out = []
    for j in trace:
        submit = t0 + round((j.submit_ts - t0) * factor)
        if j.start_ts is None:
            start, end = None, submit + (j.end_ts - j.submit_ts)
        else:
            start = submit + (j.start_ts - j.submit_ts)
            end = start + j.runtime_s
        out.append(JobRecord(
            job_id=j.job_id, submit_ts=submit, start_ts=start, end_ts=end,
            requested_nodes=min(j.requested_nodes, cluster_nodes), gpus_per_node=j.gpus_per_node, state=j.state,
            checkpoint_interval_s=j.checkpoint_interval_s, time_limit_s=j.time_limit_s,
        ))
    return out
