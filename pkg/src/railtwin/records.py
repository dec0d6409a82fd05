"""Job, telemetry and fault records shared by the workload, scheduler and
analytics modules."""

from __future__ import annotations

import enum
from dataclasses import dataclass

from .exceptions import ConfigError


class JobState(str, enum.Enum):
    COMPLETED = "COMPLETED"
    CANCELLED = "CANCELLED"
    FAILED = "FAILED"
    PENDING = "PENDING"
    RUNNING = "RUNNING"

    @property
    def terminal(self) -> bool:
        return self in (JobState.COMPLETED, JobState.CANCELLED, JobState.FAILED)


TERMINAL_STATES = (JobState.COMPLETED, JobState.CANCELLED, JobState.FAILED)

# node-count buckets: (label, lo, hi) inclusive
SIZE_BUCKETS = (
    ("1", 1, 1),
    ("2", 2, 2),
    ("3-4", 3, 4),
    ("5-8", 5, 8),
    ("9-16", 9, 16),
    ("17-32", 17, 32),
    ("33-64", 33, 64),
)
BUCKET_LABELS = tuple(b[0] for b in SIZE_BUCKETS)


def bucket_of(nodes: int, buckets=SIZE_BUCKETS) -> str | None:
    for label, lo, hi in buckets:
        if lo <= nodes <= hi:
            return label
    return None


def bucket_bounds(label: str, buckets=SIZE_BUCKETS) -> tuple:
    for name, lo, hi in buckets:
        if name == label:
            return lo, hi
    raise KeyError(label)


@dataclass(frozen=True)
class JobRecord:
    job_id: str
    submit_ts: int
    start_ts: int | None
    end_ts: int | None
    requested_nodes: int
    gpus_per_node: int
    state: JobState
    checkpoint_interval_s: int | None = None
    allocated_nodes: tuple = ()
    time_limit_s: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "state", JobState(self.state))
        object.__setattr__(self, "allocated_nodes", tuple(self.allocated_nodes))

    def violations(self) -> list:
        """Broken invariants, as readable strings."""
        out = []
        if self.requested_nodes < 1:
            out.append("requested_nodes must be >= 1")
        if self.gpus_per_node < 0:
            out.append("gpus_per_node must be >= 0")
        if self.start_ts is not None and self.start_ts < self.submit_ts:
            out.append("start_ts < submit_ts")
        if self.end_ts is not None:
            if self.start_ts is not None and self.end_ts < self.start_ts:
                out.append("end_ts < start_ts")
            if self.end_ts < self.submit_ts:
                out.append("end_ts < submit_ts")
        if self.state.terminal and self.end_ts is None:
            out.append(f"terminal state {self.state.value} without end_ts")
        if self.state is JobState.RUNNING and self.start_ts is None:
            out.append("RUNNING without start_ts")
        if self.state is JobState.PENDING and self.start_ts is not None:
            out.append("PENDING with start_ts")
        if self.checkpoint_interval_s is not None and self.checkpoint_interval_s <= 0:
            out.append("checkpoint_interval_s must be > 0")
        if self.time_limit_s is not None and self.time_limit_s <= 0:
            out.append("time_limit_s must be > 0")
        if self.allocated_nodes and len(self.allocated_nodes) != self.requested_nodes:
            out.append("allocated_nodes does not match requested_nodes")
        return out

    @property
    def runtime_s(self) -> int | None:
        """Held-resource duration; 0 for jobs that ended without starting."""
        if self.start_ts is not None and self.end_ts is not None:
            return self.end_ts - self.start_ts
        if self.start_ts is None and self.state.terminal:
            return 0
        return None

    @property
    def gpus(self) -> int:
        return self.requested_nodes * self.gpus_per_node


class TelemetrySource(str, enum.Enum):
    GPU_UTIL = "gpu_util"
    NVLINK_BYTES = "nvlink_bytes"
    PCIE_BYTES = "pcie_bytes"
    NIC_COUNTER = "nic_counter"

    @property
    def cumulative(self) -> bool:
        return self is not TelemetrySource.GPU_UTIL


@dataclass(frozen=True)
class TelemetrySample:
    """``value_a`` is utilization percent, or the cumulative TX byte count;
    ``value_b`` is the cumulative RX byte count for counters."""

    node_id: str
    source: TelemetrySource
    index: int
    ts: float
    value_a: float
    value_b: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "source", TelemetrySource(self.source))

    @property
    def total_bytes(self) -> float:
        return self.value_a + (self.value_b or 0)


class FaultComponent(str, enum.Enum):
    GPU = "gpu"
    NVLINK_PCIE = "nvlink_pcie"
    NIC = "nic"
    LEAF_SPINE_SWITCH = "leaf_spine_switch"
    STORAGE_SWITCH = "storage_switch"
    MISCONFIG = "misconfig"


FAULT_COMPONENTS = tuple(FaultComponent)
NODE_COMPONENTS = (FaultComponent.GPU, FaultComponent.NVLINK_PCIE, FaultComponent.NIC)


class RecoveryKind(str, enum.Enum):
    RESTART = "restart"
    REPLACE = "replace"


DEFAULT_RECOVERY_S = 600


@dataclass(frozen=True)
class FaultEvent:
    time: float
    component: FaultComponent
    target: str
    recovery: RecoveryKind = RecoveryKind.RESTART
    recovery_duration_s: float = DEFAULT_RECOVERY_S

    def __post_init__(self):
        try:
            object.__setattr__(self, "component", FaultComponent(self.component))
            object.__setattr__(self, "recovery", RecoveryKind(self.recovery))
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if self.recovery_duration_s < 0:
            raise ConfigError("recovery_duration_s must be >= 0")
