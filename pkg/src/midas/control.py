"""Two-rate control plane: warmup target selection, the fast knob loop with
deadbands/hysteresis/jitter, and the slow per-class TTL loop."""

from __future__ import annotations

import statistics
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, Protocol, Sequence

from .cache import CacheClass, ttl_update
from .core import Rng
from .routing import RoutingKnobs


@dataclass(frozen=True)
class ControlDefaults:
    """Controller constants. ``None`` for an RTT-derived value means "one RTT"."""

    T_fast_ms: float = 250.0
    T_slow_ms: float = 30_000.0
    d0: int = 2
    delta_L0: int = 4
    delta_L_min: int = 2
    delta_L_max: int = 8
    delta_t0_ms: Optional[float] = None
    ttl_min_ms: Optional[float] = None
    ttl_max_ms: float = 30_000.0
    C_ms: float = 300.0
    f_cap: float = 0.1
    f_max0: Optional[float] = None
    H_down: float = 0.02
    H_up: float = 0.10
    K_up: int = 3
    K_down: int = 8
    w1: float = 1.0
    w2: float = 1.0
    eps: float = 1e-6
    W_ms: float = 1000.0
    alpha_fast: float = 0.2
    beta_slow: float = 0.1
    p_star: float = 1e-4
    gamma: float = 0.5
    W_high: float = 0.3
    jitter_frac: float = 0.1
    adapt_f_max: bool = False

    def delta_t0(self, rtt_ms: float) -> float:
        return rtt_ms if self.delta_t0_ms is None else self.delta_t0_ms

    def ttl_min(self, rtt_ms: float) -> float:
        return rtt_ms if self.ttl_min_ms is None else self.ttl_min_ms

    def f_max_initial(self) -> float:
        return self.f_cap if self.f_max0 is None else self.f_max0

    def validate(self) -> list[str]:
        errs = []
        if self.d0 not in (1, 2, 3, 4):
            errs.append(f"d0: must be in {{1,2,3,4}} (got {self.d0})")
        if self.delta_L_min < 0:
            errs.append(f"delta_L_min: must be >= 0 (got {self.delta_L_min})")
        if self.delta_L_max < self.delta_L_min:
            errs.append("delta_L_max: must be >= delta_L_min")
        if not self.delta_L_min <= self.delta_L0 <= self.delta_L_max:
            errs.append(f"delta_L0: must lie in [delta_L_min, delta_L_max] (got {self.delta_L0})")
        if not self.H_down < self.H_up:
            errs.append("H_down: must be < H_up")
        if self.K_up < 1 or self.K_down < 1:
            errs.append("K_up/K_down: must be >= 1")
        if not 0.0 <= self.f_cap <= 1.0:
            errs.append(f"f_cap: must be in [0, 1] (got {self.f_cap})")
        if self.f_max0 is not None and not 0.0 <= self.f_max0 <= self.f_cap:
            errs.append("f_max0: must be in [0, f_cap]")
        for name in ("T_fast_ms", "T_slow_ms", "C_ms", "W_ms", "ttl_max_ms", "eps", "w1", "w2"):
            if getattr(self, name) <= 0:
                errs.append(f"{name}: must be > 0")
        for name in ("alpha_fast", "beta_slow"):
            if not 0.0 < getattr(self, name) <= 1.0:
                errs.append(f"{name}: must be in (0, 1]")
        if not 0.0 < self.p_star < 1.0:
            errs.append("p_star: must be in (0, 1)")
        if not 0.0 < self.gamma < 1.0:
            errs.append("gamma: must be in (0, 1)")
        if not 0.0 <= self.W_high <= 1.0:
            errs.append("W_high: must be in [0, 1]")
        return errs


@dataclass(frozen=True)
class ControlKnobs:
    d: int
    delta_L: int
    delta_t_ms: float
    f_max: float
    ttl_ms: dict = field(default_factory=dict, compare=False)

    @classmethod
    def initial(cls, defaults: ControlDefaults, rtt_ms: float) -> "ControlKnobs":
        return cls(defaults.d0, defaults.delta_L0, defaults.delta_t0(rtt_ms),
                   defaults.f_max_initial())

    def routing(self) -> RoutingKnobs:
        return RoutingKnobs(self.d, self.delta_L, self.delta_t_ms, self.f_max)


@dataclass(frozen=True)
class ControlTargets:
    B_tgt: float
    P99_tgt: float
    warmup_ms: float = 0.0
    rtt_ms: float = 0.0
    p99_warm_ms: float = 0.0
    B_median: float = 0.0


@dataclass(frozen=True)
class HysteresisState:
    above: int = 0
    below: int = 0


@dataclass(frozen=True)
class WarmupTrace:
    B_series: Sequence[float]
    latencies_ms: Sequence[float]
    rtts_ms: Sequence[float]
    duration_ms: float


class WarmupHandle(Protocol):
    def run_warmup(self, duration_ms: float, utilization_cap: float) -> WarmupTrace: ...


class WarmupError(RuntimeError):
    pass


def targets_from_trace(trace: WarmupTrace) -> ControlTargets:
    from .telemetry import quantile

    if not trace.latencies_ms or not trace.B_series:
        raise WarmupError("warmup completed no requests; cannot derive control targets")
    B_med = statistics.median(trace.B_series)
    rtt = statistics.median(trace.rtts_ms)
    p99 = quantile(trace.latencies_ms, 0.99)
    return ControlTargets(
        B_tgt=B_med + 0.05,
        P99_tgt=max(p99 * 1.25, rtt + 2.0),
        warmup_ms=trace.duration_ms,
        rtt_ms=rtt,
        p99_warm_ms=p99,
        B_median=B_med,
    )


def warmup_targets(sim_handle: WarmupHandle, warmup_duration_ms: float = 60_000.0,
                   utilization_cap: float = 0.30) -> ControlTargets:
    return targets_from_trace(sim_handle.run_warmup(warmup_duration_ms, utilization_cap))


def fast_tick(state: HysteresisState, knobs: ControlKnobs, P: float, rng: Rng,
              defaults: ControlDefaults, rtt_ms: float) -> tuple[ControlKnobs, HysteresisState]:
    above = state.above + 1 if P > defaults.H_up else 0
    below = state.below + 1 if P < defaults.H_down else 0
    d, dL = knobs.d, knobs.delta_L
    if above >= defaults.K_up:
        d = min(d + 1, 4)
        dL = max(dL - 1, defaults.delta_L_min)
        above = below = 0
    elif below >= defaults.K_down:
        d = max(d - 1, 1)
        dL = min(dL + 1, defaults.delta_L_max)
        above = below = 0
    spread = defaults.jitter_frac * rtt_ms
    delta_t = defaults.delta_t0(rtt_ms) + rng.uniform(-spread, spread)
    f_max = knobs.f_max
    if defaults.adapt_f_max:
        f_max = min(defaults.f_cap, defaults.f_cap * P / defaults.H_up)
    return (replace(knobs, d=d, delta_L=dL, delta_t_ms=delta_t, f_max=f_max),
            HysteresisState(above, below))


def slow_tick(classes: Iterable[CacheClass], knobs: ControlKnobs, defaults: ControlDefaults,
              rtt_ms: float, lease_remaining_ms: Optional[float] = None) -> ControlKnobs:
    """Fold the interval's write mix into W_c, then recompute every class TTL."""
    ttl = dict(knobs.ttl_ms)
    for c in classes:
        if c.requests:
            frac = c.writes / c.requests
            c.write_fraction = (1 - defaults.beta_slow) * c.write_fraction + defaults.beta_slow * frac
        c.ttl_ms = ttl_update(c, defaults.p_star, lease_remaining_ms, defaults.gamma,
                              defaults.W_high, ttl_min_ms=defaults.ttl_min(rtt_ms),
                              ttl_max_ms=defaults.ttl_max_ms)
        ttl[c.id] = c.ttl_ms
        c.requests = c.writes = 0
    return replace(knobs, ttl_ms=ttl)


def delta_v(L_p: float, L_j: float, batch: int = 1) -> float:
    """Change in sum-of-squares potential when ``batch`` requests move p -> j."""
    if batch < 1:
        raise ValueError("batch must be >= 1")
    return 2 * batch * (L_j - L_p) + 2 * batch * batch
