"""Rail-optimized leaf-spine cluster model.

Every compute node exposes one fabric NIC per rail; rail ``r`` of every node
in a pod is wired to the same leaf, and every leaf has an uplink to every
spine.  Same-rail traffic inside a pod therefore crosses a single leaf, while
cross-rail or cross-pod traffic goes leaf -> spine -> leaf.

Inter-switch links are modeled as single links of ``isl_gbps`` (800 GbE),
not as two bundled 400 GbE members.
"""

from __future__ import annotations

import enum
import json
import zlib
from collections import deque
from dataclasses import asdict, dataclass, field
from pathlib import Path as _FsPath

from ._validation import check_count, check_positive
from .exceptions import ConfigError, RoutingError


class NicRole(str, enum.Enum):
    INTER_NODE = "inter_node"
    STORAGE = "storage"
    RESERVED = "reserved"
    MANAGEMENT = "management"


class HopKind(str, enum.Enum):
    INTRA_NODE = "intra_node"
    RAIL_LOCAL = "rail_local"
    CROSS_POD = "cross_pod"


# (nic index, device, role, attached gpu) for an 8-GPU / 8-rail compute node.
DEFAULT_NIC_LAYOUT = (
    (0, "mlx5_0", NicRole.INTER_NODE, 0),
    (1, "mlx5_1", NicRole.INTER_NODE, 1),
    (2, "mlx5_2", NicRole.INTER_NODE, 2),
    (3, "mlx5_3", NicRole.RESERVED, None),
    (4, "mlx5_4", NicRole.INTER_NODE, 3),
    (5, "mlx5_5", NicRole.INTER_NODE, 4),
    (6, "mlx5_6", NicRole.INTER_NODE, 5),
    (7, "mlx5_7", NicRole.INTER_NODE, 6),
    (8, "mlx5_8", NicRole.STORAGE, None),
    (9, "mlx5_11", NicRole.INTER_NODE, 7),
    (10, "mlx5_bond_0", NicRole.STORAGE, None),
    (11, "mgmt0", NicRole.MANAGEMENT, None),
)


@dataclass(frozen=True)
class TopologyConfig:
    pods: int = 2
    leafs_per_pod: int = 8
    spines: int = 8
    nodes_per_pod: int = 50
    gpus_per_node: int = 8
    rails_per_node: int = 8
    host_link_gbps: float = 400.0
    isl_gbps: float = 800.0
    link_latency_ns: float = 1000.0

    def check(self) -> None:
        for name in ("pods", "leafs_per_pod", "spines", "nodes_per_pod",
                     "gpus_per_node", "rails_per_node"):
            check_count(name, getattr(self, name))
        check_positive("host_link_gbps", self.host_link_gbps)
        check_positive("isl_gbps", self.isl_gbps)
        if self.link_latency_ns < 0:
            raise ConfigError("link_latency_ns must be >= 0")
        if self.rails_per_node != self.leafs_per_pod:
            raise ConfigError(
                f"rails_per_node ({self.rails_per_node}) must equal "
                f"leafs_per_pod ({self.leafs_per_pod}): each rail maps to one leaf"
            )
        if self.gpus_per_node != self.rails_per_node:
            raise ConfigError(
                f"gpus_per_node ({self.gpus_per_node}) must equal rails_per_node "
                f"({self.rails_per_node}) for a one-to-one GPU/NIC affinity"
            )

    @property
    def num_nodes(self) -> int:
        return self.pods * self.nodes_per_pod

    @classmethod
    def from_dict(cls, data: dict) -> "TopologyConfig":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown topology keys: {sorted(unknown)}")
        return cls(**data)


@dataclass(frozen=True)
class NicSpec:
    index: int
    device: str
    role: NicRole
    speed_gbps: float


@dataclass(frozen=True)
class NodeSpec:
    node_id: str
    pod: int
    gpus: int
    nics: tuple
    gpu_nic_affinity: dict = field(hash=False)

    def nic(self, index: int) -> NicSpec:
        for nic in self.nics:
            if nic.index == index:
                return nic
        raise KeyError(f"{self.node_id} has no nic {index}")

    def fabric_nics(self) -> list:
        """Inter-node NIC indices ordered by rail."""
        return [self.gpu_nic_affinity[g] for g in sorted(self.gpu_nic_affinity)]


@dataclass(frozen=True)
class SwitchSpec:
    switch_id: str
    role: str  # "leaf" | "spine"
    pod: int | None = None
    rail: int | None = None


@dataclass(frozen=True)
class Link:
    link_id: int
    a: str
    b: str
    capacity_gbps: float
    latency_ns: float
    kind: str  # "host" | "isl"


@dataclass(frozen=True)
class Path:
    links: tuple
    vertices: tuple
    hop_kind: HopKind

    @property
    def latency_hops(self) -> int:
        return len(self.links)


def nic_vertex(node_id: str, nic: int) -> str:
    return f"{node_id}/nic{nic}"


def split_vertex(vertex: str):
    """Inverse of :func:`nic_vertex`; returns None for switch vertices."""
    if "/nic" not in vertex:
        return None
    node, nic = vertex.split("/nic")
    return node, int(nic)


def node_index(node_id: str) -> int:
    return int(node_id.lstrip("n"))


@dataclass(frozen=True)
class ClusterTopology:
    config: TopologyConfig
    nodes: tuple
    switches: tuple
    links: tuple
    rail_map: dict = field(hash=False)

    def __post_init__(self):
        object.__setattr__(self, "_nodes", {n.node_id: n for n in self.nodes})
        object.__setattr__(self, "_switches", {s.switch_id: s for s in self.switches})
        by_ends = {}
        for link in self.links:
            by_ends[(link.a, link.b)] = link
            by_ends[(link.b, link.a)] = link
        object.__setattr__(self, "_by_ends", by_ends)
        object.__setattr__(self, "_by_id", {l.link_id: l for l in self.links})

    # lookups -------------------------------------------------------------
    def node(self, node_id: str) -> NodeSpec:
        try:
            return self._nodes[node_id]
        except KeyError:
            raise KeyError(f"unknown node {node_id!r}") from None

    def has_node(self, node_id: str) -> bool:
        return node_id in self._nodes

    def switch(self, switch_id: str) -> SwitchSpec:
        return self._switches[switch_id]

    def has_switch(self, switch_id: str) -> bool:
        return switch_id in self._switches

    def link(self, link_id: int) -> Link:
        return self._by_id[link_id]

    def link_between(self, a: str, b: str) -> Link | None:
        return self._by_ends.get((a, b))

    def leafs(self) -> list:
        return [s for s in self.switches if s.role == "leaf"]

    def spines(self) -> list:
        return [s for s in self.switches if s.role == "spine"]

    def nic_role(self, node_id: str, nic: int) -> NicRole:
        return self.node(node_id).nic(nic).role

    def nic_rail(self, node_id: str, nic: int) -> int:
        node = self.node(node_id)
        for gpu, idx in node.gpu_nic_affinity.items():
            if idx == nic:
                return gpu
        raise RoutingError(f"{node_id} nic {nic} is not an inter_node NIC")

    def nic_for_gpu(self, node_id: str, gpu: int) -> int:
        node = self.node(node_id)
        try:
            return node.gpu_nic_affinity[gpu]
        except KeyError:
            raise KeyError(f"{node_id} has no gpu {gpu}") from None

    def leaf_id(self, pod: int, rail: int) -> str:
        return f"leaf{pod * self.config.leafs_per_pod + rail}"

    def nodes_in_pod(self, pod: int) -> list:
        return [n.node_id for n in self.nodes if n.pod == pod]


def _node_nics(cfg: TopologyConfig):
    if cfg.rails_per_node == 8:
        nics = tuple(
            NicSpec(idx, dev, role,
                    1.0 if role is NicRole.MANAGEMENT else cfg.host_link_gbps)
            for idx, dev, role, _ in DEFAULT_NIC_LAYOUT
        )
        affinity = {gpu: idx for idx, _, _, gpu in DEFAULT_NIC_LAYOUT if gpu is not None}
        return nics, affinity
    rails = cfg.rails_per_node
    nics = [NicSpec(i, f"mlx5_{i}", NicRole.INTER_NODE, cfg.host_link_gbps)
            for i in range(rails)]
    nics.append(NicSpec(rails, f"mlx5_{rails}", NicRole.STORAGE, cfg.host_link_gbps))
    nics.append(NicSpec(rails + 1, f"mlx5_{rails + 1}", NicRole.STORAGE, cfg.host_link_gbps))
    nics.append(NicSpec(rails + 2, "mgmt0", NicRole.MANAGEMENT, 1.0))
    return tuple(nics), {g: g for g in range(rails)}


def build_topology(cfg: TopologyConfig) -> ClusterTopology:
    cfg.check()
    nics, affinity = _node_nics(cfg)
    switches = []
    for pod in range(cfg.pods):
        for rail in range(cfg.leafs_per_pod):
            switches.append(SwitchSpec(f"leaf{pod * cfg.leafs_per_pod + rail}",
                                       "leaf", pod, rail))
    for s in range(cfg.spines):
        switches.append(SwitchSpec(f"spine{s}", "spine"))

    nodes, links, rail_map = [], [], {}
    for pod in range(cfg.pods):
        for k in range(cfg.nodes_per_pod):
            node_id = f"n{pod * cfg.nodes_per_pod + k}"
            nodes.append(NodeSpec(node_id, pod, cfg.gpus_per_node, nics, dict(affinity)))
            for rail in range(cfg.rails_per_node):
                leaf = f"leaf{pod * cfg.leafs_per_pod + rail}"
                links.append(Link(len(links), nic_vertex(node_id, affinity[rail]), leaf,
                                  cfg.host_link_gbps, cfg.link_latency_ns, "host"))
                rail_map[(node_id, rail)] = leaf
    for sw in switches:
        if sw.role != "leaf":
            continue
        for s in range(cfg.spines):
            links.append(Link(len(links), sw.switch_id, f"spine{s}",
                              cfg.isl_gbps, cfg.link_latency_ns, "isl"))
    return ClusterTopology(cfg, tuple(nodes), tuple(switches), tuple(links), rail_map)


def select_spine(topo: ClusterTopology, src_node: str, dst_node: str, rail: int) -> str:
    """ECMP stand-in: a stable hash of (src node, dst node, rail)."""
    key = f"{src_node}|{dst_node}|{rail}".encode()
    return f"spine{zlib.crc32(key) % topo.config.spines}"


def _fabric_endpoint(topo: ClusterTopology, endpoint) -> tuple:
    node_id, nic = endpoint
    if not topo.has_node(node_id):
        raise RoutingError(f"unknown node {node_id!r}")
    try:
        role = topo.nic_role(node_id, nic)
    except KeyError as exc:
        raise RoutingError(str(exc)) from None
    if role is not NicRole.INTER_NODE:
        raise RoutingError(
            f"{node_id} nic {nic} has role {role.value}; only inter_node NICs carry fabric traffic"
        )
    return node_id, nic, topo.node(node_id).pod, topo.nic_rail(node_id, nic)


def route(topo: ClusterTopology, src, dst) -> Path:
    """Shortest fabric path between two inter-node NICs."""
    s_node, s_nic, s_pod, s_rail = _fabric_endpoint(topo, src)
    d_node, d_nic, d_pod, d_rail = _fabric_endpoint(topo, dst)
    if s_node == d_node:
        raise RoutingError(
            f"intra-node: {s_node} nic {s_nic} -> nic {d_nic} uses NVLink, not the fabric"
        )
    src_v, dst_v = nic_vertex(s_node, s_nic), nic_vertex(d_node, d_nic)
    s_leaf = topo.rail_map[(s_node, s_rail)]
    d_leaf = topo.rail_map[(d_node, d_rail)]
    if s_leaf == d_leaf:
        vertices = (src_v, s_leaf, dst_v)
        kind = HopKind.RAIL_LOCAL
    else:
        spine = select_spine(topo, s_node, d_node, s_rail)
        vertices = (src_v, s_leaf, spine, d_leaf, dst_v)
        kind = HopKind.CROSS_POD
    ids = []
    for a, b in zip(vertices, vertices[1:]):
        link = topo.link_between(a, b)
        if link is None:
            raise RoutingError(f"no link {a} -> {b}")
        ids.append(link.link_id)
    return Path(tuple(ids), vertices, kind)


def validate(topo: ClusterTopology) -> list:
    """Return human-readable invariant violations (empty when consistent)."""
    cfg = topo.config
    violations = []
    leaf_ids = {s.switch_id for s in topo.leafs()}
    spine_ids = [s.switch_id for s in topo.spines()]

    for node in topo.nodes:
        fabric = [n for n in node.nics if n.role is NicRole.INTER_NODE]
        if len(fabric) != cfg.rails_per_node:
            violations.append(
                f"node {node.node_id} has {len(fabric)} inter_node NICs, "
                f"expected {cfg.rails_per_node}"
            )
        targets = sorted(node.gpu_nic_affinity.values())
        if (sorted(node.gpu_nic_affinity) != list(range(node.gpus))
                or targets != sorted(n.index for n in fabric)):
            violations.append(f"node {node.node_id} gpu-nic affinity is not a bijection")
        seen = {}
        for rail in range(cfg.rails_per_node):
            nic = node.gpu_nic_affinity.get(rail)
            if nic is None:
                continue
            vertex = nic_vertex(node.node_id, nic)
            wired = [l for l in topo.links if vertex in (l.a, l.b)]
            leafs = [l.b if l.a == vertex else l.a for l in wired]
            leafs = [x for x in leafs if x in leaf_ids]
            if not leafs:
                violations.append(f"node {node.node_id} rail {rail} unwired")
                continue
            leaf = leafs[0]
            if topo.switch(leaf).pod != node.pod:
                violations.append(
                    f"node {node.node_id} rail {rail} wired to {leaf} outside pod {node.pod}"
                )
            if leaf in seen:
                violations.append(
                    f"node {node.node_id} rails {seen[leaf]} and {rail} share {leaf}"
                )
            seen[leaf] = rail

    for leaf in sorted(leaf_ids, key=lambda s: int(s[4:])):
        for spine in spine_ids:
            if topo.link_between(leaf, spine) is None:
                violations.append(f"leaf {leaf} missing uplink to spine {spine}")

    # Connectivity over switches and whole nodes (NICs of one node are joined
    # internally by NVLink/PCIe).
    def owner(v):
        parts = split_vertex(v)
        return parts[0] if parts else v

    adj = {n.node_id: set() for n in topo.nodes}
    adj.update({s.switch_id: set() for s in topo.switches})
    for link in topo.links:
        a, b = owner(link.a), owner(link.b)
        adj.setdefault(a, set()).add(b)
        adj.setdefault(b, set()).add(a)
    if adj:
        start = next(iter(adj))
        seen_v = {start}
        todo = deque([start])
        while todo:
            for nxt in adj[todo.popleft()]:
                if nxt not in seen_v:
                    seen_v.add(nxt)
                    todo.append(nxt)
        if len(seen_v) != len(adj):
            missing = sorted(set(adj) - seen_v)
            violations.append(
                f"link graph disconnected: {len(missing)} unreachable from {start} "
                f"(e.g. {missing[0]})"
            )
    return violations


def topology_to_dict(topo: ClusterTopology) -> dict:
    return {
        "config": asdict(topo.config),
        "nodes": [
            {
                "node_id": n.node_id,
                "pod": n.pod,
                "gpus": n.gpus,
                "nics": [
                    {"index": c.index, "device": c.device, "role": c.role.value,
                     "speed_gbps": c.speed_gbps}
                    for c in n.nics
                ],
                "gpu_nic_affinity": {str(g): i for g, i in sorted(n.gpu_nic_affinity.items())},
            }
            for n in topo.nodes
        ],
        "switches": [asdict(s) for s in topo.switches],
        "links": [asdict(l) for l in topo.links],
    }


def dump_topology(topo: ClusterTopology, path) -> None:
    _FsPath(path).write_text(json.dumps(topology_to_dict(topo), indent=2) + "\n")


def load_topology_config(path) -> TopologyConfig:
    """Read a topology config from JSON or YAML (flat mapping of config keys)."""
    from .config import load_mapping

    data = load_mapping(path)
    if "topology" in data and isinstance(data["topology"], dict):
        data = data["topology"]
    return TopologyConfig.from_dict(data)
