"""Flow sets for collective communication patterns.

Planners are pure: they map a :class:`CollectiveSpec` and a topology to a
:class:`FlowSet`.  Each participant is a ``(node_id, gpu)`` pair and sends
through the NIC wired to its GPU, so inter-node flows always ride the GPU's
own rail.  Transfers between GPUs of one node are kept in the plan (they
count toward category totals) but flagged ``fabric=False``.

Phases are barriers: every flow of phase ``k`` finishes before phase ``k+1``
starts.
"""

from __future__ import annotations

import csv
import enum
import io
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path

from ._validation import check_count, check_nonnegative
from .exceptions import ConfigError, ParseError
from .fabricsim import Flow
from .topology import ClusterTopology


class CollectiveKind(str, enum.Enum):
    RING_ALLREDUCE = "ring_allreduce"
    ALLTOALL = "alltoall"
    PARALLEL3D = "parallel3d"
    INCAST = "incast"


class Category(str, enum.Enum):
    SENDRECV_PP = "sendrecv_pp"
    REDUCESCATTER_TP = "reducescatter_tp"
    ALLREDUCE_DP = "allreduce_dp"
    ALLGATHER_TP = "allgather_tp"
    GENERIC = "generic"


@dataclass(frozen=True)
class CollectiveSpec:
    """What to plan.

    ``payload_bytes`` is the per-rank buffer for ring allreduce / alltoall and
    the per-sender message for incast.  The parallel3d fields describe one
    optimizer step: ``activation_bytes`` is one microbatch's boundary
    activation for a whole TP group, ``gradient_bytes`` the per-rank gradient
    buffer reduced across data-parallel replicas and ``tp_bytes`` the per-rank
    tensor-parallel collective volume of one microbatch.
    """

    kind: CollectiveKind
    participants: tuple = ()
    payload_bytes: int = 0
    dp: int = 1
    tp: int = 1
    pp: int = 1
    vp: int = 1
    microbatches: int = 1
    activation_bytes: int = 0
    gradient_bytes: int = 0
    tp_bytes: int = 0
    # False: interleaving multiplies pipeline sends by vp at full size.
    # True: vp-times more sends, each 1/vp of the activation.
    vp_split_messages: bool = False
    receiver: tuple | None = None
    rounds: int = 1

    def __post_init__(self):
        object.__setattr__(self, "kind", CollectiveKind(self.kind))
        object.__setattr__(self, "participants",
                           tuple((str(n), int(g)) for n, g in self.participants))
        if self.receiver is not None:
            n, g = self.receiver
            object.__setattr__(self, "receiver", (str(n), int(g)))

    def check(self) -> None:
        if not self.participants:
            raise ConfigError("participants must be nonempty")
        if len(set(self.participants)) != len(self.participants):
            raise ConfigError("participants must be distinct")
        for name in ("payload_bytes", "activation_bytes", "gradient_bytes", "tp_bytes"):
            check_nonnegative(name, getattr(self, name))
        for name in ("dp", "tp", "pp", "vp", "microbatches", "rounds"):
            check_count(name, getattr(self, name), minimum=1)
        if self.kind is CollectiveKind.PARALLEL3D:
            n = self.dp * self.tp * self.pp
            if n != len(self.participants):
                raise ConfigError(
                    f"dp*tp*pp = {n} does not match {len(self.participants)} participants")
        if self.kind is CollectiveKind.INCAST and self.receiver is None:
            raise ConfigError("incast needs a receiver")

    @classmethod
    def from_dict(cls, data: dict) -> "CollectiveSpec":
        data = dict(data)
        try:
            kind = CollectiveKind(data.pop("kind"))
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"bad or missing collective kind: {exc}") from None
        known = set(cls.__dataclass_fields__) - {"kind"}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown collective fields: {sorted(unknown)}")
        return cls(kind=kind, **data)


@dataclass(frozen=True)
class PlannedFlow:
    src: tuple  # (node_id, gpu)
    dst: tuple
    src_nic: int | None
    dst_nic: int | None
    bytes: int
    category: Category
    phase: int
    fabric: bool


@dataclass
class FlowSet:
    flows: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.flows)

    def __iter__(self):
        return iter(self.flows)

    @property
    def num_phases(self) -> int:
        return 1 + max((f.phase for f in self.flows), default=-1)

    def fabric_flows(self) -> list:
        return [f for f in self.flows if f.fabric]

    def total_bytes(self, fabric_only: bool = False) -> int:
        return sum(f.bytes for f in self.flows if f.fabric or not fabric_only)

    def bytes_sent_by(self, participant) -> int:
        participant = (str(participant[0]), int(participant[1]))
        return sum(f.bytes for f in self.flows if f.src == participant)

    def category_bytes(self, fabric_only: bool = True) -> dict:
        out = {c.value: 0 for c in Category}
        for f in self.flows:
            if f.fabric or not fabric_only:
                out[f.category.value] += f.bytes
        return out

    def category_shares(self, fabric_only: bool = True) -> dict:
        totals = self.category_bytes(fabric_only)
        grand = sum(totals.values())
        return {k: (v / grand if grand else 0.0) for k, v in totals.items()}

    def to_fabric_flows(self, prefix: str = "c", start_ns: float = 0.0) -> list:
        """Fabric flows as simulator input.

        Transfers between the same pair of NICs share one queue pair, so
        rate state carries over from phase to phase.
        """
        out = []
        for i, f in enumerate(self.fabric_flows()):
            src = (f.src[0], f.src_nic)
            dst = (f.dst[0], f.dst_nic)
            out.append(Flow(
                flow_id=f"{prefix}{i}", src=src, dst=dst, size_bytes=f.bytes,
                start_ns=start_ns, phase=f.phase, category=f.category.value,
                qp=f"{src[0]}/{src[1]}>{dst[0]}/{dst[1]}",
            ))
        return out

    CSV_COLUMNS = ("src_node", "src_nic", "dst_node", "dst_nic", "bytes", "category", "phase")

    def to_csv(self) -> str:
        """Replayable CSV of the fabric flows."""
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.CSV_COLUMNS)
        for f in self.fabric_flows():
            writer.writerow((f.src[0], f.src_nic, f.dst[0], f.dst_nic, f.bytes,
                             f.category.value, f.phase))
        return buf.getvalue()


def read_flow_csv(path) -> list:
    """Load a replay CSV as fabricsim flows."""
    text = Path(path).read_text()
    reader = csv.DictReader(io.StringIO(text))
    missing = set(FlowSet.CSV_COLUMNS) - set(reader.fieldnames or ())
    if missing:
        raise ParseError(f"{path}: missing columns {sorted(missing)}")
    flows = []
    for lineno, row in enumerate(reader, start=2):
        try:
            src = (row["src_node"], int(row["src_nic"]))
            dst = (row["dst_node"], int(row["dst_nic"]))
            size = int(row["bytes"])
            phase = int(row["phase"])
            category = Category(row["category"]).value
        except (TypeError, ValueError) as exc:
            raise ParseError(f"{path}:{lineno}: {exc}") from None
        if size < 0 or phase < 0:
            raise ParseError(f"{path}:{lineno}: negative bytes or phase")
        flows.append(Flow(flow_id=f"r{lineno - 2}", src=src, dst=dst, size_bytes=size,
                          phase=phase, category=category,
                          qp=f"{src[0]}/{src[1]}>{dst[0]}/{dst[1]}"))
    return flows


def split_bytes(total: int, parts: int) -> list:
    """Integer split whose pieces differ by at most one byte and sum to ``total``."""
    q, r = divmod(total, parts)
    return [q + (1 if i < r else 0) for i in range(parts)]


class _Planner:
    def __init__(self, topo: ClusterTopology):
        self.topo = topo
        # keyed by (src, dst, category, phase) so repeated transfers merge
        self.acc = OrderedDict()

    def add(self, src, dst, nbytes, category, phase):
        if nbytes <= 0 or src == dst:
            return
        key = (src, dst, category, phase)
        self.acc[key] = self.acc.get(key, 0) + nbytes

    def flowset(self) -> FlowSet:
        flows = []
        for (src, dst, category, phase), nbytes in self.acc.items():
            fabric = src[0] != dst[0]
            src_nic = self.topo.nic_for_gpu(*src) if fabric else None
            dst_nic = self.topo.nic_for_gpu(*dst) if fabric else None
            flows.append(PlannedFlow(src, dst, src_nic, dst_nic, nbytes, category,
                                     phase, fabric))
        flows.sort(key=lambda f: f.phase)  # stable: keeps emission order within a phase
        return FlowSet(flows)

    def ring(self, ranks, payload, category, phase0, reduce_scatter=True, all_gather=True):
        """Chunked ring; returns the next free phase."""
        n = len(ranks)
        if n < 2:
            return phase0
        chunks = split_bytes(payload, n)
        phase = phase0
        if reduce_scatter:
            for s in range(n - 1):
                for i in range(n):
                    self.add(ranks[i], ranks[(i + 1) % n], chunks[(i - s) % n],
                             category, phase)
                phase += 1
        if all_gather:
            for s in range(n - 1):
                for i in range(n):
                    self.add(ranks[i], ranks[(i + 1) % n], chunks[(i + 1 - s) % n],
                             category, phase)
                phase += 1
        return phase


def _check_participants(topo: ClusterTopology, spec: CollectiveSpec) -> None:
    spec.check()
    for node, gpu in spec.participants:
        topo.nic_for_gpu(node, gpu)  # raises on unknown node or gpu


def ring_allreduce_plan(spec: CollectiveSpec, topo: ClusterTopology,
                        category: Category = Category.GENERIC) -> FlowSet:
    """Reduce-scatter then all-gather around the ring in participant order."""
    _check_participants(topo, spec)
    planner = _Planner(topo)
    planner.ring(list(spec.participants), spec.payload_bytes, Category(category), 0)
    return planner.flowset()


def alltoall_plan(spec: CollectiveSpec, topo: ClusterTopology) -> FlowSet:
    """Every rank sends its ``j``-th slice to rank ``j``, all in one phase."""
    _check_participants(topo, spec)
    ranks = spec.participants
    slices = split_bytes(spec.payload_bytes, len(ranks))
    planner = _Planner(topo)
    for src in ranks:
        for j, dst in enumerate(ranks):
            planner.add(src, dst, slices[j], Category.GENERIC, 0)
    return planner.flowset()


def incast_plan(spec: CollectiveSpec, topo: ClusterTopology) -> FlowSet:
    """Senders each push ``payload_bytes`` to one receiver, ``rounds`` times."""
    _check_participants(topo, spec)
    topo.nic_for_gpu(*spec.receiver)
    planner = _Planner(topo)
    for r in range(spec.rounds):
        for src in spec.participants:
            planner.add(src, spec.receiver, spec.payload_bytes, Category.GENERIC, r)
    return planner.flowset()


def parallel3d_plan(spec: CollectiveSpec, topo: ClusterTopology) -> FlowSet:
    """One training step of data/tensor/pipeline parallel traffic.

    Ranks follow Megatron ordering: tensor-parallel index varies fastest,
    then data-parallel, then pipeline stage.  Phase 0 holds the step body
    (pipeline sends both ways for every microbatch, tensor-parallel
    collectives); the data-parallel gradient ring follows as barrier phases.
    """
    _check_participants(topo, spec)
    dp, tp, pp, vp = spec.dp, spec.tp, spec.pp, spec.vp
    gpus_per_node = min(topo.node(n).gpus for n, _ in spec.participants)
    if tp > gpus_per_node:
        raise ConfigError(f"TP spills across nodes: tp={tp} > {gpus_per_node} GPUs per node")
    ranks = spec.participants

    def rank(t, d, p):
        return ranks[t + tp * (d + dp * p)]

    planner = _Planner(topo)
    m = spec.microbatches

    # pipeline: with vp chunks per stage there are pp*vp - 1 virtual hops,
    # virtual stage j living on physical stage j % pp
    hops = pp * vp - 1 if pp > 1 else 0
    per_rank = split_bytes(spec.activation_bytes, tp)  # scatter/gather across the TP group
    for j in range(hops):
        a, b = j % pp, (j + 1) % pp
        for d in range(dp):
            for t in range(tp):
                msg = per_rank[t] // vp if spec.vp_split_messages else per_rank[t]
                planner.add(rank(t, d, a), rank(t, d, b), msg * m, Category.SENDRECV_PP, 0)
                planner.add(rank(t, d, b), rank(t, d, a), msg * m, Category.SENDRECV_PP, 0)

    # tensor parallel: reduce-scatter + all-gather rings inside each TP group
    if tp > 1:
        for p in range(pp):
            for d in range(dp):
                group = [rank(t, d, p) for t in range(tp)]
                planner.ring(group, spec.tp_bytes * m, Category.REDUCESCATTER_TP, 0,
                             all_gather=False)
                planner.ring(group, spec.tp_bytes * m, Category.ALLGATHER_TP, 0,
                             reduce_scatter=False)
        # both rings were written into phase 0..tp-2; fold them to phase 0
        _fold_phases(planner, {Category.REDUCESCATTER_TP, Category.ALLGATHER_TP})

    # data parallel gradient allreduce, one ring per (tp, pp) coordinate
    if dp > 1:
        for p in range(pp):
            for t in range(tp):
                group = [rank(t, d, p) for d in range(dp)]
                planner.ring(group, spec.gradient_bytes, Category.ALLREDUCE_DP, 1)
    return planner.flowset()


def _fold_phases(planner: _Planner, categories) -> None:
    merged = OrderedDict()
    for (src, dst, cat, phase), nbytes in planner.acc.items():
        key = (src, dst, cat, 0 if cat in categories else phase)
        merged[key] = merged.get(key, 0) + nbytes
    planner.acc = merged


def plan(spec: CollectiveSpec, topo: ClusterTopology) -> FlowSet:
    kind = CollectiveKind(spec.kind)
    if kind is CollectiveKind.RING_ALLREDUCE:
        return ring_allreduce_plan(spec, topo)
    if kind is CollectiveKind.ALLTOALL:
        return alltoall_plan(spec, topo)
    if kind is CollectiveKind.INCAST:
        return incast_plan(spec, topo)
    return parallel3d_plan(spec, topo)


def node_gpus(topo: ClusterTopology, nodes, gpus_per_node: int | None = None) -> tuple:
    """Participants for whole nodes, node-major."""
    out = []
    for node_id in nodes:
        gpus = topo.node(node_id).gpus
        count = gpus if gpus_per_node is None else gpus_per_node
        out.extend((node_id, g) for g in range(count))
    return tuple(out)


def gpt3_step_spec(topo: ClusterTopology, nodes=None, dp: int = 4, tp: int = 4,
                   pp: int = 16, vp: int = 6, global_batch: int = 1024,
                   micro_batch: int = 2, seq_len: int = 2048, hidden: int = 12288,
                   layers: int = 96, params: float = 175e9,
                   bytes_per_value: int = 2, **overrides) -> CollectiveSpec:
    """A 175B-parameter GPT step laid out as dp x tp x pp over whole nodes."""
    world = dp * tp * pp
    if nodes is None:
        per_node = topo.node("n0").gpus
        nodes = [f"n{i}" for i in range(-(-world // per_node))]
    participants = node_gpus(topo, nodes)[:world]
    if global_batch % (dp * micro_batch):
        raise ConfigError("global batch must divide into dp * micro batch")
    activation = seq_len * micro_batch * hidden * bytes_per_value
    layers_per_rank = layers // pp
    fields = dict(
        kind=CollectiveKind.PARALLEL3D, participants=participants,
        dp=dp, tp=tp, pp=pp, vp=vp,
        microbatches=global_batch // (dp * micro_batch),
        activation_bytes=activation,
        gradient_bytes=int(params * bytes_per_value) // (tp * pp),
        # two forward and two backward TP collectives per layer
        tp_bytes=4 * layers_per_rank * activation,
    )
    fields.update(overrides)
    return CollectiveSpec(**fields)
