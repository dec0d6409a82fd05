"""Workload metrics over job records, telemetry and fault logs.

Every metric is computed with exact rational arithmetic (``Fraction``) and
converted to floats only when a report is serialized.
"""

from __future__ import annotations

import bisect
import csv
import io
import json
import statistics
from collections import defaultdict
from dataclasses import dataclass, field
from datetime import datetime, timezone
from fractions import Fraction
from pathlib import Path

from sklearn.base import BaseEstimator

from ._validation import check_is_fitted
from .exceptions import DataError
from .records import (
    FAULT_COMPONENTS,
    SIZE_BUCKETS,
    TERMINAL_STATES,
    JobState,
    TelemetrySource,
    bucket_of,
)

LOW_UTIL_THRESHOLD = 20
GB = 10 ** 9
WEEK_S = 7 * 86400


def _utc(ts) -> datetime:
    return datetime.fromtimestamp(float(ts), tz=timezone.utc)


# --------------------------------------------------------------------------
# occupancy and distributions

def gpu_occupied_time(job) -> Fraction:
    """GPU-hours held by ``job``: runtime times allocated GPUs."""
    if job.start_ts is None or job.end_ts is None:
        raise DataError(f"job {job.job_id}: no runtime")
    return Fraction(job.end_ts - job.start_ts, 3600) * job.requested_nodes * job.gpus_per_node


@dataclass(frozen=True)
class Share:
    count: int
    count_share: Fraction
    gpu_hours: Fraction
    gpu_time_share: Fraction | None  # None when the total GPU time is zero


def _hours(job) -> Fraction:
    # terminal jobs that never started held nothing
    if job.start_ts is None and job.state.terminal:
        return Fraction(0)
    return gpu_occupied_time(job)


def _shares(groups: dict, order) -> dict:
    n = sum(len(v) for v in groups.values())
    if n == 0:
        return {}
    hours = {k: sum((_hours(j) for j in groups.get(k, ())), Fraction(0)) for k in order}
    total = sum(hours.values(), Fraction(0))
    return {
        k: Share(len(groups.get(k, ())), Fraction(len(groups.get(k, ())), n), hours[k],
                 hours[k] / total if total else None)
        for k in order
    }


def state_distribution(jobs) -> dict:
    """Per-state shares of job count and of GPU-occupied time."""
    groups = defaultdict(list)
    for j in jobs:
        if not j.state.terminal:
            raise DataError(f"job {j.job_id}: state {j.state.value} is not terminal")
        groups[j.state].append(j)
    return {s.value: v for s, v in _shares(groups, TERMINAL_STATES).items()}


def size_distribution(jobs, buckets=SIZE_BUCKETS) -> dict:
    """Per node-count bucket shares of job count and of GPU-occupied time."""
    groups = defaultdict(list)
    for j in jobs:
        label = bucket_of(j.requested_nodes, buckets)
        if label is None:
            raise DataError(f"job {j.job_id}: {j.requested_nodes} nodes fall outside all buckets")
        groups[label].append(j)
    return _shares(groups, [b[0] for b in buckets])


# --------------------------------------------------------------------------
# utilization

@dataclass(frozen=True)
class UtilSummary:
    avg_util: Fraction
    low_util_fraction: Fraction
    coverage: Fraction  # share of the job window backed by telemetry


def utilization_profile(job, samples, cadence_s: float = 60,
                        threshold: float = LOW_UTIL_THRESHOLD,
                        per_gpu: bool = False) -> UtilSummary:
    """Time-weighted mean GPU utilization and low-utilization time share.

    Each timestamp's samples hold until the next timestamp, at most
    ``cadence_s``; longer gaps are unknown and left out of both numerator
    and denominator.  By default the low-utilization test applies to the
    per-timestep mean over the job's GPUs; ``per_gpu`` applies it to each
    GPU separately.
    """
    if job.start_ts is None or job.end_ts is None:
        raise DataError(f"job {job.job_id}: no runtime")
    nodes = set(job.allocated_nodes)
    by_ts = defaultdict(list)
    for s in samples:
        if s.source is not TelemetrySource.GPU_UTIL:
            continue
        if nodes and s.node_id not in nodes:
            continue
        if job.start_ts <= s.ts < job.end_ts:
            by_ts[s.ts].append(Fraction(s.value_a))
    if not by_ts:
        raise DataError(f"job {job.job_id}: no telemetry")
    stamps = sorted(by_ts)
    cadence = Fraction(cadence_s)
    end = Fraction(job.end_ts)
    limit = Fraction(threshold)
    covered = weighted = low = Fraction(0)
    for k, ts in enumerate(stamps):
        t = Fraction(ts)
        stop = min(t + cadence, end)
        if k + 1 < len(stamps):
            stop = min(stop, Fraction(stamps[k + 1]))
        dt = stop - t
        values = by_ts[ts]
        mean = sum(values, Fraction(0)) / len(values)
        covered += dt
        weighted += mean * dt
        if per_gpu:
            low += dt * Fraction(sum(1 for v in values if v < limit), len(values))
        elif mean < limit:
            low += dt
    window = end - job.start_ts
    return UtilSummary(weighted / covered, low / covered, covered / window)


# --------------------------------------------------------------------------
# runtimes and submissions

def runtime_cdf(jobs, bucket: str | None = None, buckets=SIZE_BUCKETS) -> list:
    """Right-continuous empirical CDF as ``(runtime_s, P(runtime <= x))`` steps."""
    runtimes = sorted(j.runtime_s for j in jobs
                      if j.runtime_s is not None
                      and (bucket is None or bucket_of(j.requested_nodes, buckets) == bucket))
    n = len(runtimes)
    out = []
    for i, r in enumerate(runtimes):
        if i + 1 < n and runtimes[i + 1] == r:
            continue
        out.append((r, Fraction(i + 1, n)))
    return out


def runtime_exceedance(jobs, threshold_s: float, bucket: str | None = None,
                       buckets=SIZE_BUCKETS) -> Fraction | None:
    """P(runtime > threshold) within ``bucket``; None when the bucket is empty."""
    runtimes = [j.runtime_s for j in jobs
                if j.runtime_s is not None
                and (bucket is None or bucket_of(j.requested_nodes, buckets) == bucket)]
    if not runtimes:
        return None
    return Fraction(sum(1 for r in runtimes if r > threshold_s), len(runtimes))


def daily_submissions(jobs, buckets=SIZE_BUCKETS) -> dict:
    """UTC start date -> bucket -> count; each job counts once, on its start day."""
    out = defaultdict(lambda: defaultdict(int))
    for j in jobs:
        if j.start_ts is None:
            continue
        out[_utc(j.start_ts).date().isoformat()][bucket_of(j.requested_nodes, buckets)] += 1
    return {day: dict(out[day]) for day in sorted(out)}


# --------------------------------------------------------------------------
# faults

@dataclass(frozen=True)
class FaultTable:
    counts: dict  # component -> count, in canonical component order
    shares: dict  # component -> Fraction
    monthly: dict  # "YYYY-MM" -> count

    @property
    def total(self) -> int:
        return sum(self.counts.values())


def fault_report(faults) -> FaultTable:
    counts = {c.value: 0 for c in FAULT_COMPONENTS}
    monthly = defaultdict(int)
    for f in faults:
        counts[f.component.value] += 1
        monthly[_utc(f.time).strftime("%Y-%m")] += 1
    total = sum(counts.values())
    shares = {c: Fraction(n, total) if total else Fraction(0) for c, n in counts.items()}
    return FaultTable(counts, shares, {m: monthly[m] for m in sorted(monthly)})


# --------------------------------------------------------------------------
# NIC peaks

@dataclass(frozen=True)
class PortRate:
    node_id: str
    port: int
    t0: float
    t1: float
    rate_gbs: Fraction  # GB/s, full duplex


@dataclass
class NicPeak:
    peak_gbs: Fraction | None = None
    peak_node: str | None = None
    peak_port: int | None = None
    t0: float | None = None
    t1: float | None = None
    port_peaks: dict = field(default_factory=dict)  # "node/port" -> peak GB/s
    instant_rates: dict = field(default_factory=dict)  # peak node's ports at the instant
    min_max_ratio: Fraction | None = None
    imbalanced: bool = False
    reason: str = ""

    @property
    def empty(self) -> bool:
        return self.peak_gbs is None


def _series(samples, source, nodes, start, end) -> dict:
    series = defaultdict(list)
    for s in samples:
        if s.source is not source:
            continue
        if nodes is not None and s.node_id not in nodes:
            continue
        if start is not None and not start <= s.ts <= end:
            continue
        series[(s.node_id, s.index)].append(s)
    for v in series.values():
        v.sort(key=lambda s: s.ts)
    return series


def port_rates(samples, start=None, end=None, nodes=None, min_dt: float = 50,
               max_dt: float = 70) -> list:
    """Full-duplex rates over consecutive counter pairs with min_dt <= dt <= max_dt."""
    out = []
    series = _series(samples, TelemetrySource.NIC_COUNTER, nodes, start, end)
    for (node, port), seq in sorted(series.items()):
        for a, b in zip(seq, seq[1:]):
            dt = Fraction(b.ts) - Fraction(a.ts)
            if not min_dt <= dt <= max_dt:
                continue
            delta = Fraction(b.total_bytes) - Fraction(a.total_bytes)
            out.append(PortRate(node, port, a.ts, b.ts, delta / dt / GB))
    return out


def nic_peak(samples, start=None, end=None, nodes=None, threshold: float = 0.5,
             min_dt: float = 50, max_dt: float = 70) -> NicPeak:
    """Single-port peak rate within the window plus rail balance on the peak node.

    At the peak instant (the peak pair's midpoint) each port of the peak
    node contributes the rate of its pair covering that instant; the job is
    flagged imbalanced when min/max of those rates falls below ``threshold``.
    """
    rates = port_rates(samples, start, end, nodes, min_dt, max_dt)
    if not rates:
        return NicPeak(reason=f"no counter pair with {min_dt} s <= dt <= {max_dt} s in window")
    port_peaks = {}
    for r in rates:
        key = f"{r.node_id}/{r.port}"
        if key not in port_peaks or r.rate_gbs > port_peaks[key]:
            port_peaks[key] = r.rate_gbs
    # ties go to the earliest pair, then the lowest node id and port
    best = min(rates, key=lambda r: (-r.rate_gbs, r.t1, len(r.node_id), r.node_id, r.port))
    instant = (Fraction(best.t0) + Fraction(best.t1)) / 2
    instant_rates = {}
    for r in rates:
        if r.node_id != best.node_id or not r.t0 <= instant <= r.t1:
            continue
        prev = instant_rates.get(r.port)
        mid = (Fraction(r.t0) + Fraction(r.t1)) / 2
        if prev is None or abs(mid - instant) < prev[0]:
            instant_rates[r.port] = (abs(mid - instant), r.rate_gbs)
    instant_rates = {p: v[1] for p, v in sorted(instant_rates.items())}
    top = max(instant_rates.values())
    ratio = min(instant_rates.values()) / top if top else Fraction(1)
    return NicPeak(best.rate_gbs, best.node_id, best.port, best.t0, best.t1, port_peaks,
                   instant_rates, ratio, ratio < Fraction(threshold))


@dataclass(frozen=True)
class InterconnectSnapshot:
    nvlink_gbs: dict  # gpu index -> GB/s
    pcie_gbs: dict

    @staticmethod
    def _mean(d):
        return sum(d.values(), Fraction(0)) / len(d) if d else None

    @property
    def nvlink_mean(self):
        return self._mean(self.nvlink_gbs)

    @property
    def pcie_mean(self):
        return self._mean(self.pcie_gbs)


def _nearest(seq, t, tolerance):
    stamps = [s.ts for s in seq]
    i = bisect.bisect_left(stamps, t)
    best = None
    for k in (i - 1, i):
        if 0 <= k < len(seq):
            d = abs(Fraction(seq[k].ts) - Fraction(t))
            if d <= tolerance and (best is None or d < best[0]):
                best = (d, seq[k])
    return best[1] if best else None


def interconnect_snapshot(samples, node_id: str, t0: float, t1: float,
                          tolerance_s: float = 2) -> InterconnectSnapshot:
    """Per-GPU NVLink and PCIe rates on ``node_id`` over [t0, t1].

    Each end of the interval joins to the nearest cumulative counter sample
    within ``tolerance_s``; a GPU without both ends is left out.
    """
    out = {}
    for source in (TelemetrySource.NVLINK_BYTES, TelemetrySource.PCIE_BYTES):
        series = _series(samples, source, {node_id}, None, None)
        rates = {}
        for (_, gpu), seq in sorted(series.items()):
            a = _nearest(seq, t0, Fraction(tolerance_s))
            b = _nearest(seq, t1, Fraction(tolerance_s))
            if a is None or b is None or b.ts <= a.ts:
                continue
            delta = Fraction(b.total_bytes) - Fraction(a.total_bytes)
            rates[gpu] = delta / (Fraction(b.ts) - Fraction(a.ts)) / GB
        out[source] = rates
    return InterconnectSnapshot(out[TelemetrySource.NVLINK_BYTES], out[TelemetrySource.PCIE_BYTES])


# --------------------------------------------------------------------------
# report

def _f(x, digits: int = 9):
    return None if x is None else round(float(x), digits)


def _csv(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


@dataclass
class MetricReport:
    state_dist: dict
    size_dist: dict
    util_summary: dict  # bucket -> dict of medians and counts
    runtime_cdf: dict  # bucket -> steps
    daily_series: dict
    fault_table: FaultTable
    nic_peaks: dict  # job_id -> (NicPeak, InterconnectSnapshot | None)
    rejects: dict = field(default_factory=dict)

    def headline(self) -> dict:
        """The share-level figures most often quoted about the workload."""
        sd, zd = self.state_dist, self.size_dist

        def pick(dist, keys, attr):
            vals = [getattr(dist[k], attr) for k in keys if k in dist]
            if not vals or any(v is None for v in vals):
                return None
            return sum(vals, Fraction(0))

        large = [b for b in zd if b in ("17-32", "33-64")]
        week = None
        steps = self.runtime_cdf.get("17-32")
        if steps:
            below = max((p for r, p in steps if r <= WEEK_S), default=Fraction(0))
            week = 1 - below
        return {
            "cancelled_gpu_time_share": _f(pick(sd, ["CANCELLED"], "gpu_time_share")),
            "failed_gpu_time_share": _f(pick(sd, ["FAILED"], "gpu_time_share")),
            "failed_count_share": _f(pick(sd, ["FAILED"], "count_share")),
            "single_node_count_share": _f(pick(zd, ["1"], "count_share")),
            "le4_node_count_share": _f(pick(zd, ["1", "2", "3-4"], "count_share")),
            "ge17_node_count_share": _f(pick(zd, large, "count_share")),
            "ge17_node_gpu_time_share": _f(pick(zd, large, "gpu_time_share")),
            "b17_32_over_week_share": _f(week),
        }

    def to_dict(self) -> dict:
        def share(s):
            return {"count": s.count, "count_share": _f(s.count_share),
                    "gpu_hours": _f(s.gpu_hours, 6), "gpu_time_share": _f(s.gpu_time_share)}

        nic = {}
        for job_id, (peak, snap) in self.nic_peaks.items():
            nic[job_id] = {
                "peak_gbs": _f(peak.peak_gbs), "peak_node": peak.peak_node,
                "peak_port": peak.peak_port, "t0": peak.t0, "t1": peak.t1,
                "instant_rates": {str(p): _f(v) for p, v in peak.instant_rates.items()},
                "min_max_ratio": _f(peak.min_max_ratio), "imbalanced": peak.imbalanced,
                "nvlink_gbs_per_gpu": _f(snap.nvlink_mean) if snap else None,
                "pcie_gbs_per_gpu": _f(snap.pcie_mean) if snap else None,
                "reason": peak.reason,
            }
        ft = self.fault_table
        return {
            "headline": self.headline(),
            "state_dist": {k: share(v) for k, v in self.state_dist.items()},
            "size_dist": {k: share(v) for k, v in self.size_dist.items()},
            "util_summary": self.util_summary,
            "runtime_cdf_points": {b: len(v) for b, v in self.runtime_cdf.items()},
            "daily_days": len(self.daily_series),
            "faults": {"total": ft.total, "counts": ft.counts,
                       "shares": {k: _f(v) for k, v in ft.shares.items()},
                       "monthly": ft.monthly},
            "nic_peaks": nic,
            "rejects": self.rejects,
        }

    def csv_files(self) -> dict:
        def share_rows(dist):
            return [(k, s.count, _f(s.count_share), _f(s.gpu_hours, 6), _f(s.gpu_time_share))
                    for k, s in dist.items()]

        util_cols = ("bucket", "jobs", "jobs_with_telemetry", "median_avg_util",
                     "median_low_util_fraction", "mean_coverage")
        nic_rows = []
        for job_id, (peak, snap) in self.nic_peaks.items():
            nic_rows.append((
                job_id, _f(peak.peak_gbs), peak.peak_node, peak.peak_port,
                _fmt_ts(peak.t0), _fmt_ts(peak.t1),
                ";".join(f"{p}:{_f(v, 3)}" for p, v in peak.instant_rates.items()),
                _f(peak.min_max_ratio), int(peak.imbalanced),
                _f(snap.nvlink_mean) if snap else "", _f(snap.pcie_mean) if snap else "",
                peak.reason,
            ))
        ft = self.fault_table
        return {
            "state_dist.csv": _csv(("state", "count", "count_share", "gpu_hours",
                                    "gpu_time_share"), share_rows(self.state_dist)),
            "size_dist.csv": _csv(("bucket", "count", "count_share", "gpu_hours",
                                   "gpu_time_share"), share_rows(self.size_dist)),
            "util_by_bucket.csv": _csv(util_cols, [
                (b,) + tuple(v[c] for c in util_cols[1:]) for b, v in self.util_summary.items()]),
            "runtime_cdf.csv": _csv(("bucket", "runtime_s", "cdf"), [
                (b, r, _f(p)) for b, steps in self.runtime_cdf.items() for r, p in steps]),
            "daily.csv": _csv(("date", "bucket", "count"), [
                (d, b, n) for d, counts in self.daily_series.items()
                for b, n in sorted(counts.items(), key=lambda kv: _bucket_rank(kv[0]))]),
            "faults.csv": _csv(("component", "count", "share"), [
                (c, n, _f(ft.shares[c])) for c, n in ft.counts.items()]),
            "faults_monthly.csv": _csv(("month", "count"), list(ft.monthly.items())),
            "nic_peaks.csv": _csv(("job_id", "peak_gbs", "peak_node", "peak_port", "t0", "t1",
                                   "instant_port_rates", "min_max_ratio", "imbalanced",
                                   "nvlink_gbs_per_gpu", "pcie_gbs_per_gpu", "reason"),
                                  nic_rows),
        }

    def write(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        for name, text in self.csv_files().items():
            (out / name).write_text(text)


def _fmt_ts(t):
    if t is None:
        return ""
    return int(t) if float(t).is_integer() else t


def _bucket_rank(label):
    labels = [b[0] for b in SIZE_BUCKETS]
    return labels.index(label) if label in labels else len(labels)


class WorkloadAnalyzer(BaseEstimator):
    """Computes a :class:`MetricReport` from jobs, telemetry and faults.

    ``fit`` stores ``report_``; the estimator has no learned state beyond
    the report, so ``transform``-style reuse does not apply.
    """

    def __init__(self, buckets=SIZE_BUCKETS, low_util_threshold=LOW_UTIL_THRESHOLD,
                 per_gpu_low_util=False, cadence_s=60, nic_min_dt=50, nic_max_dt=70,
                 imbalance_threshold=0.5, join_tolerance_s=2):
        self.buckets = buckets
        self.low_util_threshold = low_util_threshold
        self.per_gpu_low_util = per_gpu_low_util
        self.cadence_s = cadence_s
        self.nic_min_dt = nic_min_dt
        self.nic_max_dt = nic_max_dt
        self.imbalance_threshold = imbalance_threshold
        self.join_tolerance_s = join_tolerance_s

    def fit(self, jobs, telemetry=(), faults=()):
        jobs = list(jobs)
        telemetry = list(telemetry)
        labels = [b[0] for b in self.buckets]
        by_node = defaultdict(list)
        for s in telemetry:
            by_node[s.node_id].append(s)
        for v in by_node.values():
            v.sort(key=lambda s: s.ts)
        stamps = {n: [s.ts for s in v] for n, v in by_node.items()}

        def window(job):
            out = []
            for n in job.allocated_nodes:
                if n in by_node:
                    lo = bisect.bisect_left(stamps[n], job.start_ts)
                    hi = bisect.bisect_right(stamps[n], job.end_ts)
                    out.extend(by_node[n][lo:hi])
            return out

        util = {b: {"jobs": 0, "avg": [], "low": [], "cov": []} for b in labels}
        nic = {}
        for job in jobs:
            label = bucket_of(job.requested_nodes, self.buckets)
            if label is None:
                raise DataError(f"job {job.job_id}: {job.requested_nodes} nodes fall "
                                "outside all buckets")
            util[label]["jobs"] += 1
            if job.start_ts is None or job.end_ts is None or not job.allocated_nodes:
                continue
            samples = window(job)
            if not samples:
                continue
            if any(s.source is TelemetrySource.GPU_UTIL for s in samples):
                try:
                    prof = utilization_profile(job, samples, self.cadence_s,
                                               self.low_util_threshold, self.per_gpu_low_util)
                except DataError:
                    prof = None
                if prof is not None:
                    util[label]["avg"].append(prof.avg_util)
                    util[label]["low"].append(prof.low_util_fraction)
                    util[label]["cov"].append(prof.coverage)
            if any(s.source is TelemetrySource.NIC_COUNTER for s in samples):
                peak = nic_peak(samples, job.start_ts, job.end_ts, set(job.allocated_nodes),
                                self.imbalance_threshold, self.nic_min_dt, self.nic_max_dt)
                snap = None
                if not peak.empty:
                    snap = interconnect_snapshot(samples, peak.peak_node, peak.t0, peak.t1,
                                                 self.join_tolerance_s)
                    if not snap.nvlink_gbs and not snap.pcie_gbs:
                        snap = None
                nic[job.job_id] = (peak, snap)

        util_summary = {}
        for b in labels:
            u = util[b]
            util_summary[b] = {
                "jobs": u["jobs"],
                "jobs_with_telemetry": len(u["avg"]),
                "median_avg_util": _f(statistics.median(u["avg"])) if u["avg"] else None,
                "median_low_util_fraction": _f(statistics.median(u["low"])) if u["low"] else None,
                "mean_coverage": _f(statistics.mean(u["cov"])) if u["cov"] else None,
            }
        cdfs = {b: runtime_cdf(jobs, b, self.buckets) for b in labels}
        self.report_ = MetricReport(
            state_dist=state_distribution(jobs),
            size_dist=size_distribution(jobs, self.buckets),
            util_summary=util_summary,
            runtime_cdf={b: v for b, v in cdfs.items() if v},
            daily_series=daily_submissions(jobs, self.buckets),
            fault_table=fault_report(faults),
            nic_peaks={k: nic[k] for k in sorted(nic)},
        )
        return self

    @property
    def report(self) -> MetricReport:
        check_is_fitted(self, "report_")
        return self.report_


def analyze(jobs, telemetry=(), faults=(), **params) -> MetricReport:
    return WorkloadAnalyzer(**params).fit(jobs, telemetry, faults).report_
