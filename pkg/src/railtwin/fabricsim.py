"""Discrete-event fabric simulator: ECN marking, PFC, shared buffers, DCQCN.

Traffic moves as fixed-size segments (default 4 KiB), not individual packets.
Each directed link has an egress queue at its sending side.  Switches keep
ingress accounting per input link for PFC and a dynamic shared-buffer
threshold; bytes that arrive after a pause was issued are held in headroom.
ECN marks are applied on enqueue at switch egress queues using the
instantaneous queue length.

Units: time in ns, sizes in bytes, rates in Gbit/s.
"""

from __future__ import annotations

import csv
import enum
import heapq
import io
import json
import random
from collections import deque
from dataclasses import asdict, dataclass, field
from pathlib import Path

from sklearn.base import BaseEstimator

from . import dcqcn
from ._validation import check_is_fitted, check_nonnegative, check_positive, check_probability
from .exceptions import ConfigError, RoutingError, UnroutableFlowError
from .topology import ClusterTopology, route, split_vertex

MB = 1_000_000


@dataclass(frozen=True)
class EcnConfig:
    min_bytes: float = 2 * MB
    max_bytes: float = 10 * MB
    p_max: float = 0.01

    def check(self) -> None:
        check_nonnegative("ecn min_bytes", self.min_bytes)
        if self.max_bytes < self.min_bytes:
            raise ConfigError(
                f"ecn max_bytes ({self.max_bytes}) < min_bytes ({self.min_bytes})"
            )
        check_probability("ecn p_max", self.p_max)


@dataclass(frozen=True)
class PfcConfig:
    priority: int = 3
    xoff_bytes: int = 36_570_285
    xon_offset_bytes: int = 18_432
    headroom_bytes: int = 36 * MB
    enabled: bool = True

    def check(self) -> None:
        if self.xon_offset_bytes >= self.xoff_bytes:
            raise ConfigError("pfc xon_offset_bytes must be below xoff_bytes")
        check_positive("pfc headroom_bytes", self.headroom_bytes)
        check_nonnegative("pfc xon_offset_bytes", self.xon_offset_bytes)


@dataclass(frozen=True)
class SharedBufferConfig:
    total_bytes: int = 128 * MB
    alpha: float = 1.0
    max_share: float = 0.66

    def check(self) -> None:
        check_positive("shared total_bytes", self.total_bytes)
        check_positive("shared alpha", self.alpha)
        if not 0 < self.max_share <= 1:
            raise ConfigError(f"shared max_share must lie in (0, 1], got {self.max_share}")


@dataclass
class PortQueueState:
    occupancy_bytes: int = 0
    paused: bool = False
    headroom_used_bytes: int = 0
    drop_count: int = 0
    mark_count: int = 0
    enqueue_count: int = 0


class PauseAction(str, enum.Enum):
    NONE = "none"
    SEND_PAUSE = "send_pause"
    SEND_RESUME = "send_resume"


@dataclass(frozen=True)
class SimEvent:
    time_ns: float
    kind: str
    payload: object = None


def ecn_mark_probability(occupancy_bytes: float, cfg: EcnConfig) -> float:
    """RED-style ramp: 0 up to min, linear to p_max at max, 1 beyond max."""
    if occupancy_bytes > cfg.max_bytes:
        return 1.0
    if occupancy_bytes <= cfg.min_bytes:
        return 0.0
    return cfg.p_max * (occupancy_bytes - cfg.min_bytes) / (cfg.max_bytes - cfg.min_bytes)


def pfc_transition(state, cfg: PfcConfig, xoff_bytes: float | None = None) -> PauseAction:
    """Pause/resume decision with Xoff/Xon hysteresis.

    ``state`` needs ``occupancy_bytes`` and ``paused``.  ``xoff_bytes``
    overrides the static threshold (the engine passes the smaller of the
    static Xoff and the dynamic shared-buffer threshold).
    """
    xoff = cfg.xoff_bytes if xoff_bytes is None else xoff_bytes
    if not state.paused:
        if state.occupancy_bytes >= xoff:
            return PauseAction.SEND_PAUSE
        return PauseAction.NONE
    if state.occupancy_bytes <= max(0, xoff - cfg.xon_offset_bytes):
        return PauseAction.SEND_RESUME
    return PauseAction.NONE


def dynamic_threshold(shared: SharedBufferConfig, total_occupied_bytes: float) -> float:
    free = shared.total_bytes - total_occupied_bytes
    return max(0.0, min(shared.alpha * free, shared.max_share * shared.total_bytes))


def inflight_bound(link_gbps: float, latency_ns: float, segment_bytes: int) -> float:
    """Bytes that can still arrive on a link after its receiver decides to pause.

    One pause propagation delay plus one data propagation delay at line rate,
    plus one segment already in serialization and one started just before
    the pause frame lands.
    """
    return link_gbps / 8 * 2 * latency_ns + 2 * segment_bytes


@dataclass(frozen=True)
class Flow:
    flow_id: str
    src: tuple
    dst: tuple
    size_bytes: int
    start_ns: float = 0.0
    phase: int = 0
    category: str = "generic"
    qp: str | None = None  # flows sharing a qp key share DCQCN rate state


# --------------------------------------------------------------------------
# engine internals

class _Switch:
    __slots__ = ("sid", "shared_used", "headroom_used", "max_shared", "max_headroom")

    def __init__(self, sid):
        self.sid = sid
        self.shared_used = 0
        self.headroom_used = 0
        self.max_shared = 0
        self.max_headroom = 0


class _Ingress:
    """Per input-link accounting at a switch (duck-types PortQueueState)."""

    __slots__ = ("switch", "upstream", "occupancy_bytes", "shared", "headroom", "paused")

    def __init__(self, switch, upstream):
        self.switch = switch
        self.upstream = upstream
        self.occupancy_bytes = 0
        self.shared = 0
        self.headroom = 0
        self.paused = False  # pause frame issued upstream


class _Port:
    __slots__ = ("pid", "src", "dst", "bpns", "latency", "queue", "occ", "busy",
                 "paused", "switch", "ingress", "marks", "enq", "drops", "pauses",
                 "bytes_in", "bytes_out", "max_occ", "active")

    def __init__(self, pid, src, dst, gbps, latency):
        self.pid = pid
        self.src = src
        self.dst = dst
        self.bpns = gbps / 8.0
        self.latency = latency
        self.queue = deque()
        self.occ = 0
        self.busy = False
        self.paused = False
        self.switch = None
        self.ingress = None
        self.marks = 0
        self.enq = 0
        self.drops = 0
        self.pauses = 0
        self.bytes_in = 0
        self.bytes_out = 0
        self.max_occ = 0
        self.active = False


class _Seg:
    __slots__ = ("flow", "size", "hop", "marked", "in_headroom", "ingress")

    def __init__(self, flow, size):
        self.flow = flow
        self.size = size
        self.hop = 0
        self.marked = False
        self.in_headroom = False
        self.ingress = None


class _Qp:
    """Rate-limiter state of one sender queue pair."""

    __slots__ = ("state", "bc_bytes", "alpha_gen", "inc_gen", "timers_on",
                 "last_cnp", "sending")

    def __init__(self, line_rate, params):
        self.state = dcqcn.FlowState.initial(line_rate, params)
        self.bc_bytes = 0
        self.alpha_gen = 0
        self.inc_gen = 0
        self.timers_on = False
        self.last_cnp = None  # receiver-side CNP pacing
        self.sending = 0  # flows of this qp with bytes left to inject


class _FlowRun:
    __slots__ = ("spec", "ports", "qp", "sent", "delivered", "started", "start_ns",
                 "done_ns", "nic_bytes", "blocked", "inject_pending", "next_inject",
                 "cnps", "marks_rx", "rev_latency", "dropped")

    def __init__(self, spec, ports, qp):
        self.spec = spec
        self.ports = ports
        self.qp = qp
        self.sent = 0
        self.delivered = 0
        self.started = False
        self.start_ns = None
        self.done_ns = None
        self.nic_bytes = 0
        self.blocked = False
        self.inject_pending = False
        self.next_inject = 0.0
        self.cnps = 0
        self.marks_rx = 0
        self.rev_latency = sum(p.latency for p in ports)
        self.dropped = 0


# event kinds, in tie-break priority order
_DEPART, _ARRIVE, _PAUSE, _CNP, _ALPHA, _INCR, _INJECT, _SAMPLE = range(8)
_KIND_NAMES = ("segment_departure", "segment_arrival", "pause", "cnp",
               "alpha_timer", "increase_timer", "inject", "sample")


@dataclass
class SimReport:
    summary: dict
    port_series: list = field(default_factory=list)
    flow_series: list = field(default_factory=list)

    PORT_COLUMNS = ("port_id", "t_ns", "occupancy", "marks", "pauses", "drops", "enqueued")
    FLOW_COLUMNS = ("flow_id", "t_ns", "rc_gbps", "alpha", "delivered_bytes")

    @property
    def events_processed(self) -> int:
        return self.summary["events_processed"]

    def flow(self, flow_id: str) -> dict:
        for f in self.summary["flows"]:
            if f["flow_id"] == flow_id:
                return f
        raise KeyError(flow_id)

    def port(self, port_id: str) -> dict:
        for p in self.summary["ports"]:
            if p["port_id"] == port_id:
                return p
        raise KeyError(port_id)

    def series_for(self, port_id: str) -> list:
        return [row for row in self.port_series if row[0] == port_id]

    def to_json(self) -> str:
        return json.dumps(self.summary, indent=2, sort_keys=True) + "\n"

    def port_csv(self) -> str:
        return _rows_to_csv(self.PORT_COLUMNS, self.port_series)

    def flow_csv(self) -> str:
        return _rows_to_csv(self.FLOW_COLUMNS, self.flow_series)

    def write(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "sim_summary.json").write_text(self.to_json())
        (out / "port_series.csv").write_text(self.port_csv())
        (out / "flow_series.csv").write_text(self.flow_csv())


def _rows_to_csv(columns, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    writer.writerows(rows)
    return buf.getvalue()


class _Engine:
    def __init__(self, topo, flows, sim):
        self.sim = sim
        self.ecn = sim.ecn_
        self.pfc = sim.pfc_
        self.shared = sim.shared_buffer_
        self.params = sim.dcqcn_
        self.seg_bytes = sim.segment_bytes
        self.rng = random.Random(sim.seed)
        self.heap = []
        self.seq = 0
        self.now = 0.0
        self.events = 0
        self.ports = {}
        self.switches = {}
        self.port_series = []
        self.flow_series = []
        self.flows = []
        self.qps = {}
        self._build(topo, flows)

    # construction ------------------------------------------------------
    def _port(self, topo, a, b):
        key = (a, b)
        port = self.ports.get(key)
        if port is None:
            link = topo.link_between(a, b)
            port = _Port(f"{a}>{b}", a, b, link.capacity_gbps, link.latency_ns)
            if split_vertex(a) is None:
                port.switch = self._switch(a)
            if split_vertex(b) is None:
                port.ingress = _Ingress(self._switch(b), port)
            self.ports[key] = port
        return port

    def _switch(self, sid):
        sw = self.switches.get(sid)
        if sw is None:
            sw = self.switches[sid] = _Switch(sid)
        return sw

    def _build(self, topo, flows):
        seen = set()
        for spec in flows:
            if spec.flow_id in seen:
                raise ConfigError(f"duplicate flow id {spec.flow_id!r}")
            seen.add(spec.flow_id)
            if spec.size_bytes < 0:
                raise ConfigError(f"flow {spec.flow_id}: negative size")
            try:
                path = route(topo, tuple(spec.src), tuple(spec.dst))
            except RoutingError as exc:
                raise UnroutableFlowError(spec.flow_id, str(exc)) from None
            ports = []
            for a, b in zip(path.vertices, path.vertices[1:]):
                if topo.link_between(a, b).capacity_gbps <= 0:
                    raise UnroutableFlowError(spec.flow_id, f"link {a} -> {b} is down")
                ports.append(self._port(topo, a, b))
            key = spec.qp if spec.qp is not None else ("flow", spec.flow_id)
            qp = self.qps.get(key)
            if qp is None:
                qp = self.qps[key] = _Qp(ports[0].bpns * 8, self.params)
            self.flows.append(_FlowRun(spec, ports, qp))
        self.phases = sorted({f.spec.phase for f in self.flows})
        self.phase_idx = 0

    # event plumbing ------------------------------------------------------
    def push(self, t, kind, a=None, b=None):
        self.seq += 1
        heapq.heappush(self.heap, (t, kind, self.seq, a, b))

    def start_phase(self):
        while self.phase_idx < len(self.phases):
            phase = self.phases[self.phase_idx]
            members = [f for f in self.flows if f.spec.phase == phase]
            if all(f.spec.size_bytes == 0 for f in members):
                for f in members:
                    f.started = True
                    f.start_ns = f.done_ns = max(self.now, f.spec.start_ns)
                self.phase_idx += 1
                continue
            for f in members:
                f.started = True
                f.start_ns = max(self.now, f.spec.start_ns)
                if f.spec.size_bytes == 0:
                    f.done_ns = f.start_ns
                else:
                    f.qp.sending += 1
                    f.inject_pending = True
                    self.push(f.start_ns, _INJECT, f)
            return

    def phase_done(self):
        phase = self.phases[self.phase_idx]
        return all(f.done_ns is not None for f in self.flows if f.spec.phase == phase)

    # main loop -----------------------------------------------------------
    def run(self, horizon_ns):
        if self.flows:
            self.start_phase()
            if self.sim.sample_interval_ns and self.heap:
                self.push(0.0, _SAMPLE)
        heap = self.heap
        pop = heapq.heappop
        check = self.sim.check_invariants
        while heap:
            if heap[0][0] > horizon_ns:
                break
            t, kind, _, a, b = pop(heap)
            self.now = t
            self.events += 1
            if kind == _DEPART:
                self.on_depart(a)
            elif kind == _ARRIVE:
                self.on_arrive(a, b)
            elif kind == _INJECT:
                self.on_inject(a)
            elif kind == _PAUSE:
                a.paused = b
                if b:
                    a.pauses += 1
                    a.active = True
                else:
                    self.try_send(a)
            elif kind == _CNP:
                self.on_cnp(a)
            elif kind == _ALPHA:
                self.on_alpha(a, b)
            elif kind == _INCR:
                self.on_increase(a, b)
            else:
                self.on_sample()
            if check:
                self.check_invariants()
        return self.report(horizon_ns)

    def try_send(self, port):
        if port.busy or port.paused or not port.queue:
            return
        port.busy = True
        self.push(self.now + port.queue[0].size / port.bpns, _DEPART, port)

    def on_inject(self, f):
        f.inject_pending = False
        remaining = f.spec.size_bytes - f.sent
        if remaining <= 0:
            return
        if f.nic_bytes >= 2 * self.seg_bytes:
            f.blocked = True
            return
        size = min(self.seg_bytes, remaining)
        seg = _Seg(f, size)
        port = f.ports[0]
        port.queue.append(seg)
        port.occ += size
        port.bytes_in += size
        port.enq += 1
        port.active = True
        if port.occ > port.max_occ:
            port.max_occ = port.occ
        f.sent += size
        f.nic_bytes += size
        self.try_send(port)
        qp = f.qp
        if self.sim.cc_enabled and qp.timers_on:
            qp.bc_bytes += size
            if qp.bc_bytes >= self.params.byte_counter_bytes:
                qp.bc_bytes -= self.params.byte_counter_bytes
                qp.state = dcqcn.on_increase_event(qp.state, self.params, "byte")
        if f.sent < f.spec.size_bytes:
            rate = qp.state.rc if self.sim.cc_enabled else qp.state.line_rate
            f.next_inject = self.now + size * 8 / rate
            f.inject_pending = True
            self.push(f.next_inject, _INJECT, f)
        else:
            qp.sending -= 1
            if qp.sending == 0:
                qp.timers_on = False

    def on_depart(self, port):
        seg = port.queue.popleft()
        size = seg.size
        port.busy = False
        port.occ -= size
        port.bytes_out += size
        if port.switch is not None:
            ing = seg.ingress
            sw = port.switch
            ing.occupancy_bytes -= size
            if seg.in_headroom:
                ing.headroom -= size
                sw.headroom_used -= size
            else:
                ing.shared -= size
                sw.shared_used -= size
            if ing.paused:
                xoff = min(self.pfc.xoff_bytes, dynamic_threshold(self.shared, sw.shared_used))
                if pfc_transition(ing, self.pfc, xoff) is PauseAction.SEND_RESUME:
                    ing.paused = False
                    self.push(self.now + ing.upstream.latency, _PAUSE, ing.upstream, False)
        else:
            f = seg.flow
            f.nic_bytes -= size
            if f.blocked:
                f.blocked = False
                if not f.inject_pending:
                    f.inject_pending = True
                    self.push(max(self.now, f.next_inject), _INJECT, f)
        self.push(self.now + port.latency, _ARRIVE, port, seg)
        self.try_send(port)

    def on_arrive(self, port, seg):
        f = seg.flow
        ing = port.ingress
        if ing is None:
            f.delivered += seg.size
            if seg.marked:
                f.marks_rx += 1
                qp = f.qp
                if self.sim.cc_enabled and (
                        qp.last_cnp is None or self.now - qp.last_cnp >= self.sim.cnp_interval_ns):
                    qp.last_cnp = self.now
                    f.cnps += 1
                    self.push(self.now + f.rev_latency, _CNP, qp)
            if f.delivered >= f.spec.size_bytes and f.done_ns is None:
                f.done_ns = self.now
                if self.phase_done():
                    self.phase_idx += 1
                    self.start_phase()
            return

        size = seg.size
        sw = ing.switch
        seg.hop += 1
        out = f.ports[seg.hop]
        pfc = self.pfc
        thr = dynamic_threshold(self.shared, sw.shared_used)
        admitted = True
        if (not ing.paused and ing.shared + size <= thr
                and sw.shared_used + size <= self.shared.total_bytes):
            ing.shared += size
            sw.shared_used += size
            if sw.shared_used > sw.max_shared:
                sw.max_shared = sw.shared_used
        elif pfc.enabled and sw.headroom_used + size <= pfc.headroom_bytes:
            seg.in_headroom = True
            ing.headroom += size
            sw.headroom_used += size
            if sw.headroom_used > sw.max_headroom:
                sw.max_headroom = sw.headroom_used
        else:
            admitted = False
        if not admitted:
            out.drops += 1
            out.active = True
            f.dropped += size
            return
        ing.occupancy_bytes += size
        seg.ingress = ing
        if pfc.enabled and not ing.paused:
            xoff = min(pfc.xoff_bytes, thr)
            if seg.in_headroom or pfc_transition(ing, pfc, xoff) is PauseAction.SEND_PAUSE:
                ing.paused = True
                self.push(self.now + port.latency, _PAUSE, port, True)

        # ECN on enqueue at the egress queue
        occ = out.occ
        ecn = self.ecn
        if occ > ecn.max_bytes:
            seg.marked = True
        elif occ > ecn.min_bytes:
            p = ecn.p_max * (occ - ecn.min_bytes) / (ecn.max_bytes - ecn.min_bytes)
            if self.rng.random() < p:
                seg.marked = True
        if seg.marked:
            out.marks += 1
        out.queue.append(seg)
        out.occ += size
        out.bytes_in += size
        out.enq += 1
        out.active = True
        if out.occ > out.max_occ:
            out.max_occ = out.occ
        self.try_send(out)

    def on_cnp(self, qp):
        if qp.sending == 0:
            return
        qp.state = dcqcn.on_congestion_feedback(qp.state, self.params, self.now)
        qp.bc_bytes = 0
        qp.timers_on = True
        qp.alpha_gen += 1
        qp.inc_gen += 1
        self.push(self.now + self.params.alpha_timer_us * 1000, _ALPHA, qp, qp.alpha_gen)
        self.push(self.now + self.params.increase_timer_us * 1000, _INCR, qp, qp.inc_gen)

    def on_alpha(self, qp, gen):
        if gen != qp.alpha_gen or not qp.timers_on:
            return
        qp.state = dcqcn.alpha_decay(qp.state, self.params)
        self.push(self.now + self.params.alpha_timer_us * 1000, _ALPHA, qp, gen)

    def on_increase(self, qp, gen):
        if gen != qp.inc_gen or not qp.timers_on:
            return
        qp.state = dcqcn.on_increase_event(qp.state, self.params, "timer")
        self.push(self.now + self.params.increase_timer_us * 1000, _INCR, qp, gen)

    def on_sample(self):
        t = self.now
        rows = self.port_series
        for port in self.ports.values():
            if port.active:
                rows.append((port.pid, t, port.occ, port.marks, port.pauses,
                             port.drops, port.enq))
        for f in self.flows:
            if f.started and f.done_ns is None:
                self.flow_series.append(
                    (f.spec.flow_id, t, f.qp.state.rc, f.qp.state.alpha, f.delivered))
        if self.heap:
            self.push(t + self.sim.sample_interval_ns, _SAMPLE)

    def check_invariants(self):
        for port in self.ports.values():
            assert port.bytes_in - port.bytes_out == port.occ, port.pid
            assert port.occ >= 0, port.pid
        for sw in self.switches.values():
            assert sw.shared_used >= 0 and sw.headroom_used >= 0, sw.sid
            assert sw.shared_used <= self.shared.total_bytes, sw.sid

    def report(self, horizon_ns):
        ports = sorted(self.ports.values(), key=lambda p: p.pid)
        port_rows = [
            {
                "port_id": p.pid, "enqueued": p.enq, "marks": p.marks,
                "drops": p.drops, "pauses": p.pauses, "max_occupancy": p.max_occ,
                "occupancy": p.occ, "bytes_in": p.bytes_in, "bytes_out": p.bytes_out,
            }
            for p in ports if p.active
        ]
        flow_rows = [
            {
                "flow_id": f.spec.flow_id, "src": list(f.spec.src), "dst": list(f.spec.dst),
                "category": f.spec.category, "phase": f.spec.phase,
                "size_bytes": f.spec.size_bytes, "delivered_bytes": f.delivered,
                "dropped_bytes": f.dropped, "start_ns": f.start_ns,
                "completion_ns": f.done_ns, "cnps": f.cnps, "marks_received": f.marks_rx,
                "final_rate_gbps": f.qp.state.rc,
            }
            for f in self.flows
        ]
        enq = sum(p.enq for p in ports if p.switch is not None)
        marks = sum(p.marks for p in ports)
        summary = {
            "events_processed": self.events,
            "end_time_ns": self.now,
            "horizon_ns": horizon_ns,
            "seed": self.sim.seed,
            "config": {
                "ecn": asdict(self.ecn), "pfc": asdict(self.pfc),
                "shared_buffer": asdict(self.shared), "dcqcn": asdict(self.params),
                "segment_bytes": self.seg_bytes, "cc_enabled": self.sim.cc_enabled,
                "cnp_interval_ns": self.sim.cnp_interval_ns,
            },
            "flows": flow_rows,
            "ports": port_rows,
            "switches": [
                {"switch_id": s.sid, "max_shared_used": s.max_shared,
                 "max_headroom_used": s.max_headroom}
                for s in sorted(self.switches.values(), key=lambda s: s.sid)
            ],
            "totals": {
                "switch_enqueued": enq,
                "marks": marks,
                "mark_fraction": marks / enq if enq else 0.0,
                "drops": sum(p.drops for p in ports),
                "pauses": sum(p.pauses for p in ports),
                "delivered_bytes": sum(f.delivered for f in self.flows),
                "completed_flows": sum(1 for f in self.flows if f.done_ns is not None),
            },
        }
        return SimReport(summary, self.port_series, self.flow_series)


class FabricSimulator(BaseEstimator):
    """Estimator-style front end to the fabric engine.

    ``fit(topology, flows)`` runs one simulation and stores ``report_``.
    Parameters are regular estimator params, so ``sklearn.base.clone`` and
    ``set_params`` drive parameter sweeps.
    """

    def __init__(self, ecn=None, pfc=None, shared_buffer=None, dcqcn=None,
                 segment_bytes=4096, horizon_ns=5_000_000.0, sample_interval_ns=10_000.0,
                 cnp_interval_ns=50_000.0, cc_enabled=True, seed=0,
                 check_invariants=False):
        self.ecn = ecn
        self.pfc = pfc
        self.shared_buffer = shared_buffer
        self.dcqcn = dcqcn
        self.segment_bytes = segment_bytes
        self.horizon_ns = horizon_ns
        self.sample_interval_ns = sample_interval_ns
        self.cnp_interval_ns = cnp_interval_ns
        self.cc_enabled = cc_enabled
        self.seed = seed
        self.check_invariants = check_invariants

    def _validate_params(self, topo):
        self.ecn_ = self.ecn or EcnConfig()
        self.pfc_ = self.pfc or PfcConfig()
        self.shared_buffer_ = self.shared_buffer or SharedBufferConfig()
        self.dcqcn_ = self.dcqcn or dcqcn.DcqcnParams.for_line_rate(topo.config.host_link_gbps)
        self.ecn_.check()
        self.pfc_.check()
        self.shared_buffer_.check()
        self.dcqcn_.check(topo.config.host_link_gbps)
        check_positive("segment_bytes", self.segment_bytes)
        check_positive("horizon_ns", self.horizon_ns)
        check_nonnegative("sample_interval_ns", self.sample_interval_ns)
        check_nonnegative("cnp_interval_ns", self.cnp_interval_ns)

    def fit(self, topology: ClusterTopology, flows):
        self._validate_params(topology)
        engine = _Engine(topology, list(flows), self)
        self.report_ = engine.run(self.horizon_ns)
        return self

    def run(self, topology: ClusterTopology, flows) -> SimReport:
        return self.fit(topology, flows).report_

    @property
    def report(self) -> SimReport:
        check_is_fitted(self, "report_")
        return self.report_


def run(topo: ClusterTopology, flows, configs: dict | None = None, seed: int = 0,
        horizon_ns: float = 5_000_000.0) -> SimReport:
    """Functional entry point; ``configs`` holds FabricSimulator params."""
    params = dict(configs or {})
    return FabricSimulator(seed=seed, horizon_ns=horizon_ns, **params).run(topo, flows)


# --------------------------------------------------------------------------
# report analysis helpers

def windowed_mark_fractions(report: SimReport, port_id: str, window_ns: float,
                            start_ns: float = 0.0) -> list:
    """Mark fraction (marks / enqueues) over consecutive windows of the series.

    Windows with no enqueues are skipped.
    """
    series = [r for r in report.series_for(port_id) if r[1] >= start_ns]
    out = []
    if not series:
        return out
    base = series[0]
    for row in series[1:]:
        if row[1] - base[1] >= window_ns:
            enq = row[6] - base[6]
            if enq > 0:
                out.append((row[3] - base[3]) / enq)
            base = row
    return out


def sustained_mark_fraction(report: SimReport, port_id: str, window_ns: float = 50_000.0,
                            warmup_ns: float = 0.0) -> float:
    """Largest windowed mark fraction after warm-up (1.0 means saturation)."""
    fractions = windowed_mark_fractions(report, port_id, window_ns, warmup_ns)
    return max(fractions) if fractions else 0.0


def bottleneck_port(report: SimReport) -> str:
    """Switch egress port with the deepest queue; ties by enqueues, then id."""
    best = None
    for p in report.summary["ports"]:
        if split_vertex(p["port_id"].split(">")[0]) is not None:
            continue
        key = (p["max_occupancy"], p["enqueued"], p["port_id"])
        if best is None or key > best[0]:
            best = (key, p["port_id"])
    if best is None:
        raise ValueError("report has no switch ports")
    return best[1]


def mean_occupancy(report: SimReport, port_id: str, start_ns: float = 0.0) -> float:
    rows = [r for r in report.series_for(port_id) if r[1] >= start_ns]
    return sum(r[2] for r in rows) / len(rows) if rows else 0.0


def flow_throughput_gbps(report: SimReport, flow_id: str, start_ns: float,
                         end_ns: float) -> float:
    """Average delivery rate of one flow between the samples nearest the bounds."""
    rows = [r for r in report.flow_series if r[0] == flow_id]
    before = [r for r in rows if r[1] <= start_ns]
    after = [r for r in rows if r[1] <= end_ns]
    if not before or not after or after[-1][1] <= before[-1][1]:
        raise ValueError(f"no delivery samples for {flow_id} in window")
    return (after[-1][4] - before[-1][4]) * 8 / (after[-1][1] - before[-1][1])
