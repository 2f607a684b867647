"""Per-server load/latency sensing: EWMA smoothing, nearest-rank quantiles,
imbalance and the pressure score that drives the fast control loop."""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from typing import Deque, Optional, Sequence

LATENCY_WINDOW_CAP = 1024


class NoDataError(ValueError):
    """Raised when a quantile is requested over an empty latency window."""


def ewma_update(prev: float, sample: float, alpha: float) -> float:
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha must be in (0, 1], got {alpha}")
    return (1.0 - alpha) * prev + alpha * sample


def quantile(window: Sequence[float], q: float) -> float:
    """Nearest-rank quantile: the ceil(q*n)-th smallest sample."""
    if not 0.0 < q < 1.0:
        raise ValueError(f"q must be in (0, 1), got {q}")
    n = len(window)
    if n == 0:
        raise NoDataError("quantile of empty window")
    ordered = sorted(window)
    # guard against q*n landing a hair above an integer through float error
    rank = max(1, math.ceil(round(q * n, 9)))
    return ordered[rank - 1]


def imbalance(loads: Sequence[float], eps: float) -> float:
    """Population std of ``loads`` divided by (mean + eps)."""
    if not loads:
        raise ValueError("imbalance needs at least one server")
    if eps <= 0:
        raise ValueError("eps must be positive")
    n = len(loads)
    mean = sum(loads) / n
    var = sum((x - mean) ** 2 for x in loads) / n
    return math.sqrt(var) / (mean + eps)


@dataclass(frozen=True)
class PressureInputs:
    B: float
    p99_global: float
    B_tgt: float
    P99_tgt: float
    w1: float = 1.0
    w2: float = 1.0
    eps: float = 1e-6

    def __post_init__(self) -> None:
        if self.w1 <= 0 or self.w2 <= 0:
            raise ValueError("pressure weights must be positive")
        if self.eps <= 0:
            raise ValueError("eps must be positive")
        if self.P99_tgt <= 0:
            raise ValueError("P99_tgt must be positive")


def pressure(inputs: PressureInputs) -> float:
    # latency hinge normalised by the target so both terms are dimensionless
    b_term = max(inputs.B - inputs.B_tgt, 0.0)
    lat_term = max(inputs.p99_global / inputs.P99_tgt - 1.0, 0.0)
    return inputs.w1 * b_term + inputs.w2 * lat_term


class ServerStats:
    """Raw and smoothed observations for one server."""

    def __init__(self, window_cap: int = LATENCY_WINDOW_CAP) -> None:
        self.raw_queue_len = 0
        self.ewma_queue_len: Optional[float] = None
        self.latency_window: Deque[float] = deque(maxlen=window_cap)
        self.p50: Optional[float] = None
        self.p99: Optional[float] = None
        self.ewma_p50: Optional[float] = None
        self.ewma_p99: Optional[float] = None

    def record_latency(self, latency_ms: float) -> None:
        self.latency_window.append(latency_ms)

    def ingest(self, queue_len: int, alpha: float) -> None:
        self.raw_queue_len = queue_len
        if self.ewma_queue_len is None:
            self.ewma_queue_len = float(queue_len)
        else:
            self.ewma_queue_len = ewma_update(self.ewma_queue_len, queue_len, alpha)
        if not self.latency_window:
            return
        self.p50 = quantile(self.latency_window, 0.5)
        self.p99 = quantile(self.latency_window, 0.99)
        if self.ewma_p50 is None:
            self.ewma_p50, self.ewma_p99 = self.p50, self.p99
        else:
            self.ewma_p50 = ewma_update(self.ewma_p50, self.p50, alpha)
            self.ewma_p99 = ewma_update(self.ewma_p99, self.p99, alpha)

    @property
    def measured(self) -> bool:
        return self.ewma_p50 is not None


@dataclass(frozen=True)
class TelemetrySnapshot:
    """Immutable view the routers read until the next fast tick.

    ``p50``/``p99`` entries are ``None`` for servers with no completed requests
    yet; such servers are never steering candidates.
    """

    queue: tuple[float, ...]
    p50: tuple[Optional[float], ...]
    p99: tuple[Optional[float], ...]
    snapshot_us: int

    def staleness_us(self, now_us: int) -> int:
        return now_us - self.snapshot_us

    @property
    def m(self) -> int:
        return len(self.queue)

    def p99_global(self) -> float:
        vals = [v for v in self.p99 if v is not None]
        return max(vals) if vals else 0.0

    @classmethod
    def empty(cls, m: int, snapshot_us: int = 0) -> "TelemetrySnapshot":
        return cls((0.0,) * m, (None,) * m, (None,) * m, snapshot_us)


@dataclass(frozen=True)
class TelemetryRow:
    time_us: int
    server: int
    raw_queue: int
    ewma_queue: float
    p50: Optional[float]
    p99: Optional[float]


class Telemetry:
    """Collects per-server observations and emits a snapshot per fast tick."""

    def __init__(self, m: int, alpha: float = 0.2, eps: float = 1e-6,
                 window_cap: int = LATENCY_WINDOW_CAP) -> None:
        self.alpha = alpha
        self.eps = eps
        self.servers = [ServerStats(window_cap) for _ in range(m)]
        self.snapshot = TelemetrySnapshot.empty(m)

    def record_latency(self, server: int, latency_ms: float) -> None:
        self.servers[server].record_latency(latency_ms)

    def tick(self, now_us: int, queue_lens: Sequence[int]) -> TelemetrySnapshot:
        for stats, q in zip(self.servers, queue_lens):
            stats.ingest(q, self.alpha)
        self.snapshot = TelemetrySnapshot(
            queue=tuple(s.ewma_queue_len for s in self.servers),
            p50=tuple(s.ewma_p50 for s in self.servers),
            p99=tuple(s.ewma_p99 for s in self.servers),
            snapshot_us=now_us,
        )
        return self.snapshot

    def imbalance(self) -> float:
        return imbalance(self.snapshot.queue, self.eps)

    def rows(self, now_us: int) -> list[TelemetryRow]:
        return [
            TelemetryRow(now_us, i, s.raw_queue_len, s.ewma_queue_len or 0.0, s.p50, s.p99)
            for i, s in enumerate(self.servers)
        ]
