"""DCQCN sender-side rate control.

Rates are in Gbit/s.  All transitions are pure: they take a :class:`FlowState`
and return a new one.  The fabric engine owns the timers and calls these at
CNP arrival, timer expiry and byte-counter rollover.

Default parameters follow the commonly published DCQCN defaults; they are
plain config and can be scaled.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

from ._validation import check_count, check_positive
from .exceptions import ConfigError


@dataclass(frozen=True)
class DcqcnParams:
    g: float = 1 / 256
    rate_ai_gbps: float = 0.04
    rate_hai_gbps: float = 0.2
    alpha_timer_us: float = 55.0
    increase_timer_us: float = 55.0
    byte_counter_bytes: int = 10 * 1024 * 1024
    min_rate_gbps: float = 0.1
    f_threshold: int = 5
    initial_alpha: float = 1.0

    @classmethod
    def for_line_rate(cls, line_rate_gbps: float, reference_gbps: float = 40.0,
                      **overrides) -> "DcqcnParams":
        """Defaults rescaled from a 40G reference to another line rate.

        Rate-like and byte-like quantities scale with the bandwidth ratio and
        timers stay fixed, so the control loop keeps the same shape relative
        to line rate.
        """
        base = cls()
        k = line_rate_gbps / reference_gbps
        params = dict(
            rate_ai_gbps=base.rate_ai_gbps * k,
            rate_hai_gbps=base.rate_hai_gbps * k,
            min_rate_gbps=base.min_rate_gbps * k,
            byte_counter_bytes=int(base.byte_counter_bytes * k),
        )
        params.update(overrides)
        return replace(base, **params)

    def check(self, line_rate_gbps: float | None = None) -> None:
        if not 0 < self.g < 1:
            raise ConfigError(f"g must lie in (0, 1), got {self.g}")
        for name in ("rate_ai_gbps", "rate_hai_gbps", "alpha_timer_us",
                     "increase_timer_us", "byte_counter_bytes", "min_rate_gbps"):
            check_positive(name, getattr(self, name))
        check_count("f_threshold", self.f_threshold, minimum=0)
        if not 0 <= self.initial_alpha <= 1:
            raise ConfigError("initial_alpha must lie in [0, 1]")
        if line_rate_gbps is not None and self.min_rate_gbps > line_rate_gbps:
            raise ConfigError(
                f"min_rate_gbps ({self.min_rate_gbps}) exceeds line rate ({line_rate_gbps})"
            )


@dataclass(frozen=True)
class FlowState:
    rc: float
    rt: float
    alpha: float
    line_rate: float
    t_counter: int = 0
    bc_counter: int = 0
    last_cnp_ns: float | None = None

    @classmethod
    def initial(cls, line_rate: float, params: DcqcnParams) -> "FlowState":
        return cls(rc=line_rate, rt=line_rate, alpha=params.initial_alpha,
                   line_rate=line_rate)


def _clamp(rate: float, params: DcqcnParams, line_rate: float) -> float:
    return min(max(rate, params.min_rate_gbps), line_rate)


def on_congestion_feedback(state: FlowState, params: DcqcnParams,
                           now: float | None = None) -> FlowState:
    """Multiplicative decrease on a CNP.

    The cut uses the congestion estimate held *before* this CNP; alpha is
    then pulled toward 1.
    """
    rc = _clamp(state.rc * (1 - state.alpha / 2), params, state.line_rate)
    return replace(
        state,
        rt=state.rc,
        rc=rc,
        alpha=min(1.0, (1 - params.g) * state.alpha + params.g),
        t_counter=0,
        bc_counter=0,
        last_cnp_ns=now if now is not None else state.last_cnp_ns,
    )


def increase_stage(state: FlowState, params: DcqcnParams) -> str:
    """Stage the *next* increase event would run in."""
    hi = max(state.t_counter, state.bc_counter)
    lo = min(state.t_counter, state.bc_counter)
    if hi < params.f_threshold:
        return "fast_recovery"
    if lo < params.f_threshold:
        return "additive"
    return "hyper"


def on_increase_event(state: FlowState, params: DcqcnParams,
                      trigger: str = "timer") -> FlowState:
    """Rate recovery on timer expiry (``trigger="timer"``) or byte-counter rollover."""
    if trigger not in ("timer", "byte"):
        raise ValueError(f"trigger must be 'timer' or 'byte', got {trigger!r}")
    stage = increase_stage(state, params)
    rt = state.rt
    if stage == "additive":
        rt = rt + params.rate_ai_gbps
    elif stage == "hyper":
        step = min(state.t_counter, state.bc_counter) - params.f_threshold + 1
        rt = rt + params.rate_hai_gbps * step
    rt = min(rt, state.line_rate)
    rc = _clamp((state.rc + rt) / 2, params, state.line_rate)
    if trigger == "timer":
        return replace(state, rc=rc, rt=rt, t_counter=state.t_counter + 1)
    return replace(state, rc=rc, rt=rt, bc_counter=state.bc_counter + 1)


def alpha_decay(state: FlowState, params: DcqcnParams) -> FlowState:
    """Alpha timer expired without a CNP in the window."""
    return replace(state, alpha=(1 - params.g) * state.alpha)
