"""Accounting/telemetry ingestion and synthetic trace generation.

Accounting CSV columns: ``job_id, submit_ts, start_ts, end_ts, state, nodes,
gpus_per_node`` plus optional ``checkpoint_interval_s``, ``time_limit_s`` and
``nodelist`` (allocated node ids joined with ``;``).  Telemetry CSV columns:
``node_id, source, index, ts, value_a[, value_b]``.

Parsers never drop rows silently: malformed rows land in ``.rejects`` of the
returned list with their line number.
"""

from __future__ import annotations

import csv
import io
import json
import math
import statistics
from collections import defaultdict
from dataclasses import asdict, dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

from ._validation import check_count, check_distribution, check_positive, check_probability
from .exceptions import ConfigError, ParseError
from .records import (
    BUCKET_LABELS,
    JobRecord,
    JobState,
    TelemetrySample,
    TelemetrySource,
    bucket_bounds,
)

# --------------------------------------------------------------------------
# parsing

ACCOUNTING_REQUIRED = ("job_id", "submit_ts", "start_ts", "end_ts", "state", "nodes",
                       "gpus_per_node")
ACCOUNTING_OPTIONAL = ("checkpoint_interval_s", "time_limit_s", "nodelist")
TELEMETRY_REQUIRED = ("node_id", "source", "index", "ts", "value_a")
TELEMETRY_OPTIONAL = ("value_b",)


@dataclass(frozen=True)
class Reject:
    line: int
    reason: str
    raw: str


class Parsed(list):
    """A list of parsed records carrying the rejected rows alongside."""

    def __init__(self, items=(), rejects=(), columns=()):
        super().__init__(items)
        self.rejects = list(rejects)
        self.columns = tuple(columns)

    def rejects_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(("line", "reason", "raw"))
        for r in self.rejects:
            writer.writerow((r.line, r.reason, r.raw))
        return buf.getvalue()


def _text(source) -> str:
    if hasattr(source, "read"):
        source = source.read()
    if isinstance(source, (bytes, bytearray)):
        try:
            return bytes(source).decode("utf-8-sig")
        except UnicodeDecodeError as exc:
            raise ParseError(f"input is not UTF-8: {exc}") from None
    return source.lstrip("﻿")


def _rows(text: str, required, name: str):
    """Yield (line number, raw line, row dict) after checking the header."""
    lines = text.splitlines()
    if not lines or not lines[0].strip():
        raise ParseError(f"{name}: header row missing")
    header = [h.strip() for h in next(csv.reader([lines[0]]))]
    for col in required:
        if col not in header:
            raise ParseError(f"{name}: missing mandatory column {col!r}")
    yield header
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        cells = next(csv.reader([line]))
        yield lineno, line, cells


def _int(text: str, name: str, optional: bool = False):
    text = text.strip()
    if text == "" and optional:
        return None
    try:
        return int(text)
    except ValueError:
        raise ValueError(f"{name}: not an integer: {text!r}") from None


def _state(text: str) -> JobState:
    # accounting dialects append detail, e.g. "CANCELLED by 1000"
    token = text.strip().split(" ")[0].upper() if text.strip() else ""
    try:
        return JobState(token)
    except ValueError:
        raise ValueError(f"state: unknown {text!r}") from None


def parse_accounting(source, name: str = "accounting") -> Parsed:
    it = _rows(_text(source), ACCOUNTING_REQUIRED, name)
    header = next(it)
    records, rejects = [], []
    seen = set()
    for lineno, line, cells in it:
        if len(cells) != len(header):
            rejects.append(Reject(lineno, f"expected {len(header)} fields, got {len(cells)}", line))
            continue
        row = dict(zip(header, cells))
        try:
            nodelist = row.get("nodelist", "").strip()
            rec = JobRecord(
                job_id=row["job_id"].strip(),
                submit_ts=_int(row["submit_ts"], "submit_ts"),
                start_ts=_int(row["start_ts"], "start_ts", optional=True),
                end_ts=_int(row["end_ts"], "end_ts", optional=True),
                requested_nodes=_int(row["nodes"], "nodes"),
                gpus_per_node=_int(row["gpus_per_node"], "gpus_per_node"),
                state=_state(row["state"]),
                checkpoint_interval_s=_int(row.get("checkpoint_interval_s", ""),
                                           "checkpoint_interval_s", optional=True),
                time_limit_s=_int(row.get("time_limit_s", ""), "time_limit_s", optional=True),
                allocated_nodes=tuple(nodelist.split(";")) if nodelist else (),
            )
        except ValueError as exc:
            rejects.append(Reject(lineno, str(exc), line))
            continue
        if not rec.job_id:
            rejects.append(Reject(lineno, "job_id empty", line))
            continue
        problems = rec.violations()
        if rec.job_id in seen:
            problems.append(f"duplicate job_id {rec.job_id}")
        if problems:
            rejects.append(Reject(lineno, "; ".join(problems), line))
            continue
        seen.add(rec.job_id)
        records.append(rec)
    return Parsed(records, rejects, header)


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float) and x.is_integer():
        return str(int(x))
    return str(x) if not isinstance(x, float) else repr(x)


def accounting_columns(records) -> tuple:
    optional = []
    if any(r.checkpoint_interval_s is not None for r in records):
        optional.append("checkpoint_interval_s")
    if any(r.time_limit_s is not None for r in records):
        optional.append("time_limit_s")
    if any(r.allocated_nodes for r in records):
        optional.append("nodelist")
    return ACCOUNTING_REQUIRED + tuple(optional)


def serialize_accounting(records, columns=None) -> str:
    """Canonical CSV: mandatory columns first, then the optional ones in use."""
    if columns is None:
        columns = accounting_columns(records)
    else:
        columns = ACCOUNTING_REQUIRED + tuple(c for c in ACCOUNTING_OPTIONAL if c in columns)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for r in records:
        values = {
            "job_id": r.job_id, "submit_ts": r.submit_ts, "start_ts": r.start_ts,
            "end_ts": r.end_ts, "state": r.state.value, "nodes": r.requested_nodes,
            "gpus_per_node": r.gpus_per_node, "checkpoint_interval_s": r.checkpoint_interval_s,
            "time_limit_s": r.time_limit_s, "nodelist": ";".join(r.allocated_nodes),
        }
        writer.writerow([_fmt(values[c]) for c in columns])
    return buf.getvalue()


def normalize_accounting(text: str) -> str:
    """Canonical form of a well-formed accounting CSV, computed on the text.

    Cells are stripped, integers re-rendered, states reduced to their
    leading token, and columns reordered as :func:`serialize_accounting`
    writes them.
    """
    rows = list(csv.reader(io.StringIO(_text(text))))
    header = [h.strip() for h in rows[0]]
    columns = ACCOUNTING_REQUIRED + tuple(c for c in ACCOUNTING_OPTIONAL if c in header)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for cells in rows[1:]:
        if not any(c.strip() for c in cells):
            continue
        row = dict(zip(header, (c.strip() for c in cells)))
        out = []
        for c in columns:
            v = row.get(c, "")
            if c == "state":
                v = v.split(" ")[0].upper()
            elif c not in ("job_id", "nodelist") and v != "":
                v = str(int(v))
            out.append(v)
        writer.writerow(out)
    return buf.getvalue()


def load_accounting(path) -> Parsed:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"accounting file not found: {path}")
    return parse_accounting(path.read_bytes(), str(path))


def parse_telemetry(source, name: str = "telemetry") -> Parsed:
    it = _rows(_text(source), TELEMETRY_REQUIRED, name)
    header = next(it)
    parsed, rejects = [], []
    for lineno, line, cells in it:
        if len(cells) != len(header):
            rejects.append(Reject(lineno, f"expected {len(header)} fields, got {len(cells)}", line))
            continue
        row = dict(zip(header, (c.strip() for c in cells)))
        try:
            source_kind = TelemetrySource(row["source"])
            value_b = row.get("value_b", "")
            sample = TelemetrySample(
                node_id=row["node_id"], source=source_kind, index=_int(row["index"], "index"),
                ts=float(row["ts"]), value_a=float(row["value_a"]),
                value_b=float(value_b) if value_b != "" else None,
            )
        except ValueError as exc:
            rejects.append(Reject(lineno, str(exc), line))
            continue
        values = [sample.ts, sample.value_a] + ([sample.value_b] if sample.value_b is not None else [])
        if not all(math.isfinite(v) for v in values):
            rejects.append(Reject(lineno, "non-finite value", line))
            continue
        if source_kind is TelemetrySource.GPU_UTIL and not 0 <= sample.value_a <= 100:
            rejects.append(Reject(lineno, "util out of [0, 100]", line))
            continue
        if source_kind.cumulative and (sample.value_a < 0 or (sample.value_b or 0) < 0):
            rejects.append(Reject(lineno, "negative counter", line))
            continue
        parsed.append((lineno, line, sample))

    # counters must be nondecreasing per (node, source, index) in time order
    last = {}
    kept = []
    for lineno, line, s in sorted(parsed, key=lambda p: (p[2].ts, p[0])):
        if s.source.cumulative:
            key = (s.node_id, s.source, s.index)
            prev = last.get(key)
            if prev is not None and (s.value_a < prev.value_a
                                     or (s.value_b or 0) < (prev.value_b or 0)):
                rejects.append(Reject(lineno, "counter_reset", line))
                continue
            last[key] = s
        kept.append((lineno, s))
    kept.sort()
    rejects.sort(key=lambda r: r.line)
    return Parsed([s for _, s in kept], rejects, header)


def load_telemetry(path) -> Parsed:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"telemetry file not found: {path}")
    return parse_telemetry(path.read_bytes(), str(path))


def serialize_telemetry(samples) -> str:
    with_b = any(s.value_b is not None for s in samples)
    columns = TELEMETRY_REQUIRED + (("value_b",) if with_b else ())
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for s in samples:
        row = [s.node_id, s.source.value, s.index, _fmt(s.ts), _fmt(s.value_a)]
        if with_b:
            row.append(_fmt(s.value_b))
        writer.writerow(row)
    return buf.getvalue()


# --------------------------------------------------------------------------
# generation

@dataclass(frozen=True)
class RuntimeLaw:
    """Log-normal body with a truncated Pareto tail, in seconds.

    A fraction ``tail_weight`` of jobs draws from Pareto(``tail_xm_s``,
    ``tail_alpha``) truncated at ``tail_max_s``; the rest from a log-normal
    with the given median and log-space sigma.
    """

    median_s: float
    sigma: float
    tail_weight: float = 0.0
    tail_xm_s: float = 1.0
    tail_alpha: float = 2.0
    tail_max_s: float = 2.0
    min_s: float = 1.0

    def check(self) -> None:
        check_positive("median_s", self.median_s)
        check_positive("sigma", self.sigma)
        check_probability("tail_weight", self.tail_weight)
        if self.tail_weight > 0:
            check_positive("tail_alpha", self.tail_alpha)
            if not 0 < self.tail_xm_s < self.tail_max_s:
                raise ConfigError("tail needs 0 < tail_xm_s < tail_max_s")

    def body_quantile(self, u: float) -> float:
        z = statistics.NormalDist().inv_cdf(min(max(u, 1e-12), 1 - 1e-12))
        return self.median_s * math.exp(self.sigma * z)

    def tail_quantile(self, u: float) -> float:
        a, lo, hi = self.tail_alpha, self.tail_xm_s, self.tail_max_s
        top = 1 - (lo / hi) ** a
        return lo * (1 - u * top) ** (-1 / a)

    def sf(self, x: float) -> float:
        """P(runtime > x)."""
        if x <= 0:
            return 1.0
        body = 1 - statistics.NormalDist().cdf(math.log(x / self.median_s) / self.sigma)
        tail = 0.0
        if self.tail_weight:
            a, lo, hi = self.tail_alpha, self.tail_xm_s, self.tail_max_s
            if x < lo:
                tail = 1.0
            elif x < hi:
                tail = ((lo / x) ** a - (lo / hi) ** a) / (1 - (lo / hi) ** a)
        return (1 - self.tail_weight) * body + self.tail_weight * tail

    def mean(self) -> float:
        body = self.median_s * math.exp(self.sigma ** 2 / 2)
        if not self.tail_weight:
            return body
        a, lo, hi = self.tail_alpha, self.tail_xm_s, self.tail_max_s
        norm = 1 - (lo / hi) ** a
        if a == 1:
            tail = lo * math.log(hi / lo) / norm
        else:
            tail = a * lo ** a * (hi ** (1 - a) - lo ** (1 - a)) / ((1 - a) * norm)
        return (1 - self.tail_weight) * body + self.tail_weight * tail


@dataclass(frozen=True)
class UtilProfile:
    """Per-job GPU utilization model.

    Each job draws its share of low-utilization steps from a Beta with mean
    ``low_frac`` and concentration ``concentration``; a low step's utilization
    is uniform on [0, 20), a busy step's is normal around ``busy_util``.
    """

    low_frac: float
    busy_util: float
    busy_sd: float = 3.0
    concentration: float = 8.0
    gpu_noise: float = 2.0

    def check(self) -> None:
        check_probability("low_frac", self.low_frac)
        if not 20 <= self.busy_util <= 100:
            raise ConfigError("busy_util must lie in [20, 100]")
        check_positive("concentration", self.concentration)


@dataclass(frozen=True)
class Phase:
    start_day: float
    end_day: float
    weights: dict  # bucket -> relative submission intensity


@dataclass(frozen=True)
class GenConfig:
    job_count: int
    seed: int
    size_mix: dict
    node_mix: dict
    state_mix: dict
    runtime_law: dict
    util_profile: dict
    phase_schedule: tuple
    start_ts: int = 1_717_200_000  # 2024-06-01 00:00 UTC
    gpus_per_node: int = 8
    failed_runtime_frac: tuple = (0.0, 0.03)
    checkpoint_min_nodes: int = 9
    checkpoint_interval_s: int = 3600
    pods: int = 2
    nodes_per_pod: int = 50
    telemetry_steps: int = 10
    telemetry_cadence_s: int = 60
    stratified: bool = True

    def check(self) -> None:
        check_count("job_count", self.job_count, minimum=0)
        check_distribution("size_mix", self.size_mix)
        cluster = self.pods * self.nodes_per_pod
        for bucket, w in self.size_mix.items():
            if bucket not in BUCKET_LABELS:
                raise ConfigError(f"size_mix: unknown bucket {bucket!r}")
            if w <= 0:
                continue
            for name in ("node_mix", "state_mix", "runtime_law"):
                if bucket not in getattr(self, name):
                    raise ConfigError(f"infeasible mix: bucket {bucket} has weight {w} "
                                      f"but no {name} entry")
            nodes = self.node_mix[bucket]
            check_distribution(f"node_mix[{bucket}]", nodes)
            lo, hi = bucket_bounds(bucket)
            for n in nodes:
                if not lo <= int(n) <= hi:
                    raise ConfigError(f"node_mix[{bucket}]: {n} outside bucket")
                if int(n) > cluster:
                    raise ConfigError(f"node_mix[{bucket}]: {n} nodes exceed cluster of {cluster}")
            states = self.state_mix[bucket]
            check_distribution(f"state_mix[{bucket}]", states)
            for s in states:
                if not JobState(s).terminal:
                    raise ConfigError(f"state_mix[{bucket}]: {s} is not terminal")
            self.runtime_law[bucket].check()
            if not any(ph.weights.get(bucket, 0) > 0 and ph.end_day > ph.start_day
                       for ph in self.phase_schedule):
                raise ConfigError(f"infeasible mix: bucket {bucket} never submits")
            if self.telemetry_steps:
                if bucket not in self.util_profile:
                    raise ConfigError(f"bucket {bucket} has no util_profile")
                self.util_profile[bucket].check()
        lo, hi = self.failed_runtime_frac
        if not 0 <= lo <= hi <= 1:
            raise ConfigError("failed_runtime_frac must satisfy 0 <= lo <= hi <= 1")
        check_count("telemetry_steps", self.telemetry_steps, minimum=0)
        check_positive("telemetry_cadence_s", self.telemetry_cadence_s)

    # -- (de)serialization ------------------------------------------------
    def to_dict(self) -> dict:
        d = asdict(self)
        d["phase_schedule"] = [asdict(p) for p in self.phase_schedule]
        d["failed_runtime_frac"] = list(self.failed_runtime_frac)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "GenConfig":
        data = dict(data)
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown GenConfig fields: {sorted(unknown)}")
        try:
            data["runtime_law"] = {k: RuntimeLaw(**v) for k, v in data["runtime_law"].items()}
            data["util_profile"] = {k: UtilProfile(**v)
                                    for k, v in data.get("util_profile", {}).items()}
            data["phase_schedule"] = tuple(Phase(**p) for p in data["phase_schedule"])
            data["node_mix"] = {b: {str(n): w for n, w in m.items()}
                                for b, m in data["node_mix"].items()}
            if "failed_runtime_frac" in data:
                data["failed_runtime_frac"] = tuple(data["failed_runtime_frac"])
            cfg = cls(**data)
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"bad GenConfig: {exc}") from None
        cfg.check()
        return cfg


def calibrated_config(job_count: int = 5000, seed: int = 7, **overrides) -> GenConfig:
    """The shipped configuration calibrated to the observed workload shares."""
    text = resources.files("railtwin").joinpath("data/calibrated_gen.json").read_text()
    data = json.loads(text)
    data.update(job_count=job_count, seed=seed)
    data.update(overrides)
    return GenConfig.from_dict(data)


def _systematic(rng, n: int, weights: dict) -> list:
    """``n`` labels whose counts track ``weights`` to within one."""
    labels = list(weights)
    cdf = np.cumsum([weights[k] for k in labels])
    cdf /= cdf[-1]
    u = (np.arange(n) + rng.random()) / n
    picks = [labels[min(int(np.searchsorted(cdf, x, side="right")), len(labels) - 1)]
             for x in u]
    rng.shuffle(picks)
    return picks


_GOLDEN = (math.sqrt(5) - 1) / 2


class _Draw:
    """Job attributes drawn for one bucket before timing is assigned."""

    def __init__(self, bucket, nodes, runtime, state):
        self.bucket = bucket
        self.nodes = nodes
        self.runtime = runtime
        self.state = state
        self.submit = 0


def _bucket_counts(cfg: GenConfig, rng) -> dict:
    buckets = [b for b in BUCKET_LABELS if cfg.size_mix.get(b, 0) > 0]
    if cfg.stratified:
        picks = _systematic(rng, cfg.job_count, {b: cfg.size_mix[b] for b in buckets})
    else:
        p = np.array([cfg.size_mix[b] for b in buckets], dtype=float)
        picks = list(rng.choice(buckets, size=cfg.job_count, p=p / p.sum()))
    return {b: picks.count(b) for b in buckets}


def _runtimes(law: RuntimeLaw, n: int, rng, stratified: bool) -> list:
    if stratified:
        expected = n * law.tail_weight
        n_tail = int(expected) + (1 if rng.random() < expected - int(expected) else 0)
    else:
        n_tail = int(rng.binomial(n, law.tail_weight))

    def uniforms(k):
        if stratified:
            return (rng.permutation(k) + rng.random(k)) / max(k, 1)
        return rng.random(k)

    out = [law.tail_quantile(u) for u in uniforms(n_tail)]
    out += [law.body_quantile(u) for u in uniforms(n - n_tail)]
    return [max(law.min_s, x) for x in out]


def _states(mix: dict, runtimes: list, weights: list, rng, stratified: bool) -> list:
    order = [s for s in (JobState.COMPLETED.value, JobState.CANCELLED.value,
                         JobState.FAILED.value) if mix.get(s, 0) > 0]
    total = sum(mix[s] for s in order)
    n = len(runtimes)
    if not stratified:
        cdf = np.cumsum([mix[s] / total for s in order])
        return [order[min(int(np.searchsorted(cdf, rng.random(), side="right")), len(order) - 1)]
                for _ in range(n)]
    out = [None] * n
    ranked = sorted(range(n), key=lambda i: (-weights[i], -runtimes[i]))
    # FAILED by count: a low-discrepancy walk over runtime-ranked jobs puts
    # the configured share of failures into every runtime band
    p_fail = mix.get(JobState.FAILED.value, 0) / total
    start = rng.random()
    rest = []
    for k, i in enumerate(ranked):
        if (start + k * _GOLDEN) % 1.0 < p_fail:
            out[i] = JobState.FAILED.value
        else:
            rest.append(i)
    # the other states by GPU-time: each job goes to the state furthest
    # below its target share of the weight assigned so far
    others = [s for s in order if s != JobState.FAILED.value]
    share = {s: mix[s] / sum(mix[t] for t in others) for s in others}
    got = dict.fromkeys(others, 0.0)
    done = 0.0
    for i in rest:
        done += weights[i]
        pick = max(others, key=lambda s: (share[s] * done - got[s], share[s]))
        got[pick] += weights[i]
        out[i] = pick
    return out


def _submit_times(cfg: GenConfig, bucket: str, n: int, rng) -> np.ndarray:
    phases = [p for p in cfg.phase_schedule
              if p.weights.get(bucket, 0) > 0 and p.end_day > p.start_day]
    mass = np.array([p.weights[bucket] * (p.end_day - p.start_day) for p in phases])
    which = rng.choice(len(phases), size=n, p=mass / mass.sum())
    days = np.array([phases[k].start_day + rng.random() * (phases[k].end_day - phases[k].start_day)
                     for k in which])
    return cfg.start_ts + np.floor(days * 86400).astype(np.int64)


def draw_jobs(cfg: GenConfig, rng) -> list:
    """Bucket, node count, runtime, state and submit time for every job."""
    draws = []
    counts = _bucket_counts(cfg, rng)
    lo_f, hi_f = cfg.failed_runtime_frac
    for bucket in BUCKET_LABELS:
        n = counts.get(bucket, 0)
        if not n:
            continue
        node_mix = cfg.node_mix[bucket]
        if cfg.stratified:
            nodes = [int(x) for x in _systematic(rng, n, node_mix)]
        else:
            keys = list(node_mix)
            p = np.array([node_mix[k] for k in keys], dtype=float)
            nodes = [int(keys[i]) for i in rng.choice(len(keys), size=n, p=p / p.sum())]
        runtimes = _runtimes(cfg.runtime_law[bucket], n, rng, cfg.stratified)
        states = _states(cfg.state_mix[bucket], runtimes,
                         [a * b for a, b in zip(nodes, runtimes)], rng, cfg.stratified)
        submits = _submit_times(cfg, bucket, n, rng)
        for i in range(n):
            runtime = runtimes[i]
            if states[i] == JobState.FAILED.value:
                runtime *= lo_f + (hi_f - lo_f) * rng.random()  # failures die early
            d = _Draw(bucket, nodes[i], max(1, int(round(runtime))), JobState(states[i]))
            d.submit = int(submits[i])
            draws.append(d)
    draws.sort(key=lambda d: d.submit)
    return draws


def generate_trace(cfg: GenConfig) -> tuple:
    """Synthetic (jobs, telemetry) for ``cfg``; deterministic under ``cfg.seed``.

    Jobs are placed with the fifo_backfill scheduler on a ``pods x
    nodes_per_pod`` cluster so start times, node lists and node-level
    telemetry are mutually consistent.
    """
    from .scheduler import SchedulerPolicy, simulate_schedule
    from .topology import TopologyConfig, build_topology

    cfg.check()
    rng = np.random.default_rng(cfg.seed)
    draws = draw_jobs(cfg, rng)
    width = max(6, len(str(len(draws))))
    intended = []
    for i, d in enumerate(draws):
        interval = cfg.checkpoint_interval_s if d.nodes >= cfg.checkpoint_min_nodes else None
        intended.append(JobRecord(
            job_id=f"j{i + 1:0{width}d}", submit_ts=d.submit, start_ts=d.submit,
            end_ts=d.submit + d.runtime, requested_nodes=d.nodes,
            gpus_per_node=cfg.gpus_per_node, state=d.state, checkpoint_interval_s=interval,
        ))
    topo = build_topology(TopologyConfig(pods=cfg.pods, nodes_per_pod=cfg.nodes_per_pod))
    outcome = simulate_schedule(intended, topo, SchedulerPolicy())
    jobs = []
    for rec, out in zip(intended, outcome.jobs):
        jobs.append(replace(rec, start_ts=int(out.start), end_ts=int(out.end),
                            allocated_nodes=out.nodes))
    telemetry = _telemetry(cfg, jobs, draws, rng) if cfg.telemetry_steps else []
    return jobs, telemetry


def _telemetry(cfg: GenConfig, jobs, draws, rng) -> list:
    samples = []
    cadence = cfg.telemetry_cadence_s
    for job, d in zip(jobs, draws):
        prof = cfg.util_profile[d.bucket]
        a = prof.low_frac * prof.concentration
        b = (1 - prof.low_frac) * prof.concentration
        p_low = rng.beta(a, b) if 0 < prof.low_frac < 1 else prof.low_frac
        steps = min(cfg.telemetry_steps, -(-job.runtime_s // cadence))
        for k in range(steps):
            ts = job.start_ts + k * cadence
            if rng.random() < p_low:
                level = 20 * rng.random()
            else:
                level = float(np.clip(rng.normal(prof.busy_util, prof.busy_sd), 20, 100))
            for node in job.allocated_nodes:
                noise = rng.normal(0, prof.gpu_noise, job.gpus_per_node)
                for g in range(job.gpus_per_node):
                    value = round(float(np.clip(level + noise[g], 0, 100)), 2)
                    samples.append(TelemetrySample(node, TelemetrySource.GPU_UTIL, g, ts, value))
    samples.sort(key=lambda s: (s.ts, s.node_id, s.index))
    return samples


def write_trace(jobs, telemetry, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "accounting.csv").write_text(serialize_accounting(jobs))
    (out / "telemetry.csv").write_text(serialize_telemetry(telemetry))


def bucket_job_counts(jobs) -> dict:
    from .records import bucket_of

    counts = defaultdict(int)
    for j in jobs:
        counts[bucket_of(j.requested_nodes)] += 1
    return dict(counts)
