"""Synthetic metadata request streams: Poisson arrivals with square-wave bursts,
sinusoidal or diurnal modulation, and Zipf-skewed key popularity."""

from __future__ import annotations

import bisect
import itertools
import math
from typing import Iterator

from ..config import WorkloadSpec
from ..core import NamespaceKey, OpKind, Request, Rng

READ_MIX = (
    (OpKind.LOOKUP, 0.35),
    (OpKind.GETATTR, 0.30),
    (OpKind.STAT, 0.15),
    (OpKind.READDIR, 0.10),
    (OpKind.OPEN, 0.10),
)
_READ_OPS = [op for op, _ in READ_MIX]
_READ_CDF = list(itertools.accumulate(w for _, w in READ_MIX))


def rate_at(spec: WorkloadSpec, t_s: float) -> float:
    """Instantaneous arrival rate (req/s) at time ``t_s``."""
    base = spec.base_rate
    if spec.pattern in ("light", "skewed_zipf"):
        return base
    if spec.pattern == "bursty":
        period = spec.burst_gap_s + spec.burst_len_s
        phase = t_s % period
        return base * spec.burst_amplitude if phase >= spec.burst_gap_s else base
    if spec.pattern == "periodic":
        period, peak = spec.period_s, spec.peak_ratio
    else:
        period, peak = 24.0 * spec.diurnal_unit_s, 1.0 / spec.trough_ratio
    # trough at t=0, peak at half period
    wave = (1.0 - math.cos(2.0 * math.pi * t_s / period)) / 2.0
    return base * (1.0 + (peak - 1.0) * wave)


def peak_rate(spec: WorkloadSpec) -> float:
    if spec.pattern == "bursty":
        return spec.base_rate * max(spec.burst_amplitude, 1.0)
    if spec.pattern == "periodic":
        return spec.base_rate * max(spec.peak_ratio, 1.0)
    if spec.pattern == "diurnal":
        return spec.base_rate / spec.trough_ratio
    return spec.base_rate


class ZipfKeys:
    """Key ranks drawn with P(rank k) proportional to (k+1)^-s; s=0 is uniform."""

    def __init__(self, n: int, s: float, n_dirs: int = 64) -> None:
        self.n = n
        self.s = s
        self.n_dirs = n_dirs
        self._cdf = list(itertools.accumulate((k + 1) ** -s for k in range(n)))
        self._keys: dict[int, NamespaceKey] = {}

    def draw_rank(self, rng: Rng) -> int:
        if self.s == 0:
            return rng.randrange(self.n)
        u = rng.random() * self._cdf[-1]
        return min(bisect.bisect_right(self._cdf, u), self.n - 1)

    def key(self, rank: int) -> NamespaceKey:
        k = self._keys.get(rank)
        if k is None:
            k = self._keys[rank] = NamespaceKey.of(f"/d{rank % self.n_dirs:03d}/f{rank}")
        return k

    def draw(self, rng: Rng) -> NamespaceKey:
        return self.key(self.draw_rank(rng))


def generate_workload(spec: WorkloadSpec, rng: Rng) -> Iterator[Request]:
    """Yield requests in arrival order (thinning against the peak rate)."""
    keys = ZipfKeys(spec.key_universe, spec.zipf_s, spec.n_dirs)
    lam_max = peak_rate(spec)
    horizon_us = int(round(spec.duration_s * 1e6))
    t = 0.0
    rid = 0
    # a fixed pool of concurrently active client sessions; each arrival comes from
    # one of them and ends it with probability 1/session_mean
    active = list(range(spec.concurrent_sessions))
    seqs = [0] * spec.concurrent_sessions
    next_session = spec.concurrent_sessions
    end_p = 1.0 / spec.session_mean
    while True:
        t += rng.expovariate(lam_max)
        t_us = int(t * 1e6)
        if t_us >= horizon_us:
            return
        if spec.pattern not in ("light", "skewed_zipf") and rng.random() * lam_max >= rate_at(spec, t):
            continue
        key = keys.draw(rng)
        if rng.random() < spec.write_fraction:
            op = OpKind.CREATE if rng.random() < 0.5 else OpKind.UNLINK
        else:
            op = _READ_OPS[min(bisect.bisect_right(_READ_CDF, rng.random() * _READ_CDF[-1]),
                               len(_READ_OPS) - 1)]
        slot = rng.randrange(len(active))
        session, seq = active[slot], seqs[slot]
        if rng.random() < end_p:
            active[slot], seqs[slot] = next_session, 0
            next_session += 1
        else:
            seqs[slot] = seq + 1
        owner_bound = spec.owner_bound_fraction > 0 and rng.random() < spec.owner_bound_fraction
        yield Request(rid, key, op, t_us, op.is_write, session, seq, owner_bound)
        rid += 1
        if spec.max_arrivals is not None and rid >= spec.max_arrivals:
            return
