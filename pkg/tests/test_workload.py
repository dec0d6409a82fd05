from __future__ import annotations

import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from railtwin.exceptions import ConfigError, ParseError
from railtwin.records import BUCKET_LABELS, JobState, TelemetrySource, bucket_of
from railtwin.workload import (
    GenConfig,
    Phase,
    RuntimeLaw,
    UtilProfile,
    calibrated_config,
    draw_jobs,
    generate_trace,
    normalize_accounting,
    parse_accounting,
    parse_telemetry,
    serialize_accounting,
    serialize_telemetry,
)

HEADER = "job_id,submit_ts,start_ts,end_ts,state,nodes,gpus_per_node\n"


# -- accounting parsing --------------------------------------------------

def test_parse_field_mapping():
    jobs = parse_accounting(HEADER + "j1,0,10,3610,CANCELLED,4,8\n")
    assert len(jobs) == 1 and not jobs.rejects
    j = jobs[0]
    assert (j.requested_nodes, j.gpus_per_node, j.runtime_s) == (4, 8, 3600)
    assert j.state is JobState.CANCELLED and j.gpus == 32


def test_parse_header_only():
    jobs = parse_accounting(HEADER)
    assert jobs == [] and jobs.rejects == []


def test_parse_accepts_bytes_and_streams():
    data = (HEADER + "j1,0,10,3610,COMPLETED,1,8\n").encode()
    assert parse_accounting(data) == parse_accounting(io.BytesIO(data))


def test_end_before_start_rejected_with_line():
    jobs = parse_accounting(HEADER + "ok,0,0,5,COMPLETED,1,8\nbad,0,10,5,COMPLETED,1,8\n")
    assert [j.job_id for j in jobs] == ["ok"]
    (rej,) = jobs.rejects
    assert rej.line == 3 and "end_ts < start_ts" in rej.reason
    assert jobs.rejects_csv().splitlines()[1].startswith("3,")


@pytest.mark.parametrize("row,reason", [
    ("j,0,1,2,COMPLETED,0,8", "requested_nodes"),
    ("j,5,1,2,COMPLETED,1,8", "start_ts < submit_ts"),
    ("j,0,1,,COMPLETED,1,8", "without end_ts"),
    ("j,0,1,2,DONE,1,8", "state"),
    ("j,0,x,2,COMPLETED,1,8", "start_ts"),
    ("j,0,1,2,COMPLETED,1", "fields"),
])
def test_malformed_rows_rejected(row, reason):
    jobs = parse_accounting(HEADER + row + "\n")
    assert jobs == [] and reason in jobs.rejects[0].reason


def test_duplicate_job_id_rejected():
    jobs = parse_accounting(HEADER + "a,0,0,1,COMPLETED,1,8\na,0,0,1,COMPLETED,1,8\n")
    assert len(jobs) == 1 and "duplicate" in jobs.rejects[0].reason


def test_missing_column_fatal():
    with pytest.raises(ParseError, match="gpus_per_node"):
        parse_accounting("job_id,submit_ts,start_ts,end_ts,state,nodes\n")
    with pytest.raises(ParseError, match="header"):
        parse_accounting("")


def test_state_detail_suffix():
    jobs = parse_accounting(HEADER + "j,0,0,9,cancelled by 1000,1,8\n")
    assert jobs[0].state is JobState.CANCELLED


def test_pending_job_without_start():
    jobs = parse_accounting(HEADER + "j,0,,,PENDING,2,8\n")
    assert jobs[0].start_ts is None and jobs[0].runtime_s is None


# -- round trip ----------------------------------------------------------

def _pad(draw, text):
    return draw(st.sampled_from(["", " "])) + text + draw(st.sampled_from(["", " "]))


@st.composite
def accounting_texts(draw):
    optional = draw(st.lists(st.sampled_from(["checkpoint_interval_s", "time_limit_s",
                                              "nodelist"]), unique=True))
    columns = ["job_id", "submit_ts", "start_ts", "end_ts", "state", "nodes",
               "gpus_per_node"] + optional
    columns = draw(st.permutations(columns))
    lines = [",".join(columns)]
    for i in range(draw(st.integers(0, 8))):
        submit = draw(st.integers(0, 10**9))
        start = submit + draw(st.integers(0, 10**5))
        end = start + draw(st.integers(0, 10**6))
        nodes = draw(st.integers(1, 64))
        state = draw(st.sampled_from(["COMPLETED", "failed", "CANCELLED by 42"]))
        cells = {
            "job_id": f"job{i}", "submit_ts": str(submit), "start_ts": str(start),
            "end_ts": str(end), "state": state, "nodes": str(nodes),
            "gpus_per_node": draw(st.sampled_from(["8", "08"])),
            "checkpoint_interval_s": draw(st.sampled_from(["", "3600"])),
            "time_limit_s": draw(st.sampled_from(["", "86400"])),
            "nodelist": ";".join(f"n{k}" for k in range(nodes)) if draw(st.booleans()) else "",
        }
        lines.append(",".join(_pad(draw, cells[c]) for c in columns))
    return "\n".join(lines) + draw(st.sampled_from(["", "\n", "\n\n"]))


@settings(max_examples=200)
@given(accounting_texts())
def test_accounting_round_trip(text):
    parsed = parse_accounting(text)
    assert parsed.rejects == []
    assert serialize_accounting(parsed, parsed.columns) == normalize_accounting(text)
    # canonical output is a fixed point
    again = parse_accounting(serialize_accounting(parsed, parsed.columns))
    assert again == parsed


# -- telemetry -----------------------------------------------------------

TEL = "node_id,source,index,ts,value_a,value_b\n"


def test_counter_reset_rejected():
    text = TEL + ("n0,nic_counter,0,0,100,100\n"
                  "n0,nic_counter,0,60,50,200\n"
                  "n0,nic_counter,0,120,300,300\n")
    samples = parse_telemetry(text)
    assert [s.ts for s in samples] == [0, 120]
    (rej,) = samples.rejects
    assert rej.reason == "counter_reset" and rej.line == 3


def test_counter_reset_judged_in_time_order():
    # rows out of order are fine as long as each series rises with time
    text = TEL + "n0,nvlink_bytes,1,60,5,5\nn0,nvlink_bytes,1,0,1,1\nn1,nvlink_bytes,1,0,0,0\n"
    samples = parse_telemetry(text)
    assert samples.rejects == [] and len(samples) == 3


@pytest.mark.parametrize("row,reason", [
    ("n0,gpu_util,0,0,101,", "util"),
    ("n0,gpu_util,0,0,-1,", "util"),
    ("n0,nic_counter,0,0,-5,1", "negative"),
    ("n0,nic_counter,0,0,nan,1", "non-finite"),
    ("n0,disk,0,0,1,", "disk"),
])
def test_bad_telemetry_rows(row, reason):
    samples = parse_telemetry(TEL + row + "\n")
    assert samples == [] and reason in samples.rejects[0].reason


def test_telemetry_round_trip():
    text = TEL + "n0,gpu_util,3,60,55.5,\nn0,nic_counter,0,60,1000,2000\n"
    samples = parse_telemetry(text)
    assert parse_telemetry(serialize_telemetry(samples)) == samples
    assert samples[0].source is TelemetrySource.GPU_UTIL and samples[1].total_bytes == 3000


# -- generation ----------------------------------------------------------

def _one_bucket(job_count=10, seed=0, **kw):
    return GenConfig(
        job_count=job_count, seed=seed, size_mix={"1": 1.0}, node_mix={"1": {"1": 1.0}},
        state_mix={"1": {"COMPLETED": 0.5, "CANCELLED": 0.3, "FAILED": 0.2}},
        runtime_law={"1": RuntimeLaw(median_s=600, sigma=1.0)},
        util_profile={"1": UtilProfile(low_frac=0.5, busy_util=60)},
        phase_schedule=(Phase(0, 2, {"1": 1.0}),), pods=1, nodes_per_pod=8, **kw)


def test_single_bucket_all_single_node():
    jobs, tel = generate_trace(_one_bucket())
    assert len(jobs) == 10 and all(j.requested_nodes == 1 for j in jobs)
    assert tel and all(0 <= s.value_a <= 100 for s in tel)
    assert all(s.source is TelemetrySource.GPU_UTIL for s in tel)


def test_generation_deterministic():
    cfg = _one_bucket(job_count=200, seed=11)
    assert generate_trace(cfg) == generate_trace(cfg)
    other = generate_trace(_one_bucket(job_count=200, seed=12))
    assert other != generate_trace(cfg)


def test_infeasible_mix():
    cfg = _one_bucket()
    bad = GenConfig(**{**cfg.__dict__, "size_mix": {"1": 0.5, "2": 0.5}})
    with pytest.raises(ConfigError, match="infeasible"):
        generate_trace(bad)
    never = GenConfig(**{**cfg.__dict__, "phase_schedule": (Phase(0, 2, {"2": 1.0}),)})
    with pytest.raises(ConfigError, match="never submits"):
        generate_trace(never)
    with pytest.raises(ConfigError):
        GenConfig(**{**cfg.__dict__, "size_mix": {"1": 0.7}}).check()
    with pytest.raises(ConfigError):
        RuntimeLaw(median_s=-1, sigma=1).check()


def test_config_dict_round_trip():
    cfg = calibrated_config(job_count=100, seed=3)
    assert GenConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ConfigError):
        GenConfig.from_dict({**cfg.to_dict(), "bogus": 1})


@settings(max_examples=25)
@given(st.integers(0, 2**32 - 1), st.integers(0, 120), st.booleans())
def test_generated_traces_satisfy_invariants(seed, count, stratified):
    cfg = calibrated_config(job_count=count, seed=seed, telemetry_steps=2,
                            stratified=stratified)
    jobs, tel = generate_trace(cfg)
    assert len(jobs) == count
    assert len({j.job_id for j in jobs}) == count
    for j in jobs:
        assert j.violations() == []
        assert j.state.terminal and j.runtime_s > 0
        assert bucket_of(j.requested_nodes) in BUCKET_LABELS
        assert len(j.allocated_nodes) == j.requested_nodes
        if j.requested_nodes >= cfg.checkpoint_min_nodes:
            assert j.checkpoint_interval_s == cfg.checkpoint_interval_s
    assert all(0 <= s.value_a <= 100 for s in tel)
    # serialized traces parse back cleanly
    parsed = parse_accounting(serialize_accounting(jobs))
    assert parsed == jobs and parsed.rejects == []


def _share(draws, pred):
    return sum(1 for d in draws if pred(d)) / len(draws)


def test_calibrated_single_node_share():
    cfg = calibrated_config(job_count=5000, seed=7, telemetry_steps=0)
    draws = draw_jobs(cfg, np.random.default_rng(cfg.seed))
    assert abs(_share(draws, lambda d: d.nodes == 1) - 0.769) <= 0.02


@pytest.mark.parametrize("stratified", [True, False])
def test_statistics_converge_with_job_count(stratified):
    # error against the configured share shrinks roughly as 1/sqrt(n)
    errs = {}
    for n in (400, 40_000):
        cfg = calibrated_config(job_count=n, seed=5, telemetry_steps=0, stratified=stratified)
        draws = draw_jobs(cfg, np.random.default_rng(cfg.seed))
        single = abs(_share(draws, lambda d: d.nodes == 1) - cfg.size_mix["1"])
        failed = abs(_share(draws, lambda d: d.state is JobState.FAILED) - 0.169)
        errs[n] = (single, failed)
        sd = math.sqrt(0.25 / n)
        assert single <= 4 * sd and failed <= 4 * sd
    assert errs[40_000][0] <= 4 * math.sqrt(0.25 / 40_000)


def test_runtime_law_tail():
    law = RuntimeLaw(median_s=3600, sigma=1.0, tail_weight=0.1, tail_xm_s=86400,
                     tail_alpha=3.0, tail_max_s=10 * 86400)
    assert law.body_quantile(0.5) == pytest.approx(3600)
    assert law.tail_quantile(0.0) == pytest.approx(86400)
    assert law.tail_quantile(1.0) <= 10 * 86400 + 1e-6
    # survival at the tail start is the tail weight plus the body beyond it
    assert law.sf(86400) == pytest.approx(0.1 + 0.9 * law_body_sf(3600, 1.0, 86400), rel=1e-9)
    assert law.sf(0) == pytest.approx(1.0)


def law_body_sf(median, sigma, x):
    return 0.5 * math.erfc(math.log(x / median) / (sigma * math.sqrt(2)))
