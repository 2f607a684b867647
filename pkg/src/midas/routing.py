"""Consistent-hash placement, feasible sets, power-of-d steering with JBT
margins, shard pinning and the reroute cap; plus the round-robin baseline."""

from __future__ import annotations

import bisect
from collections import deque
from dataclasses import dataclass, field
from typing import Deque, Optional, Sequence

from .core import NamespaceKey, Request, Rng, ServerId, hash64
from .telemetry import TelemetrySnapshot

DEFAULT_VNODES = 64
DEFAULT_FEASIBLE_SIZE = 4


class HashRing:
    """Ring of virtual nodes; a shard belongs to the first position clockwise."""

    def __init__(self, servers: Sequence[ServerId], vnodes_per_server: int = DEFAULT_VNODES,
                 seed: int = 0) -> None:
        if not servers:
            raise ValueError("ring needs at least one server")
        if vnodes_per_server < 1:
            raise ValueError("vnodes_per_server must be >= 1")
        self.servers = list(servers)
        self.vnodes_per_server = vnodes_per_server
        self.seed = seed
        points = sorted(
            (hash64(f"mds-{s}#{v}", seed=seed), s)
            for s in self.servers
            for v in range(vnodes_per_server)
        )
        self.positions = [p for p, _ in points]
        self.owners = [s for _, s in points]

    @property
    def m(self) -> int:
        return len(self.servers)

    def _index(self, shard: int) -> int:
        i = bisect.bisect_left(self.positions, shard)
        return 0 if i == len(self.positions) else i

    def owner(self, shard: int) -> ServerId:
        return self.owners[self._index(shard)]

    def successors(self, shard: int, k: int) -> list[ServerId]:
        """Owner followed by the next distinct servers clockwise, ``k`` in total."""
        k = min(k, self.m)
        out: list[ServerId] = []
        i = self._index(shard)
        n = len(self.owners)
        for step in range(n):
            s = self.owners[(i + step) % n]
            if s not in out:
                out.append(s)
                if len(out) == k:
                    break
        return out

    def without(self, server: ServerId) -> "HashRing":
        return HashRing([s for s in self.servers if s != server], self.vnodes_per_server, self.seed)


def ring_build(servers: Sequence[ServerId], vnodes_per_server: int = DEFAULT_VNODES,
               seed: int = 0) -> HashRing:
    return HashRing(servers, vnodes_per_server, seed)


@dataclass(frozen=True)
class FeasibleSet:
    servers: tuple[ServerId, ...]
    constrained: bool = False

    @property
    def primary(self) -> ServerId:
        return self.servers[0]

    def __contains__(self, s: object) -> bool:
        return s in self.servers

    def __len__(self) -> int:
        return len(self.servers)


def feasible_set(ring: HashRing, key: NamespaceKey, K_f: int,
                 constraint: Optional[ServerId] = None) -> FeasibleSet:
    """K_f larger than the server count is clamped to m."""
    if K_f < 1:
        raise ValueError("K_f must be >= 1")
    if constraint is not None:
        return FeasibleSet((constraint,), constrained=True)
    return FeasibleSet(tuple(ring.successors(key.shard, K_f)))


class PinTable:
    def __init__(self) -> None:
        self._pins: dict[int, tuple[ServerId, int]] = {}

    def lookup(self, shard: int, now_us: int) -> Optional[ServerId]:
        entry = self._pins.get(shard)
        if entry is None:
            return None
        server, expires = entry
        if now_us >= expires:
            del self._pins[shard]
            return None
        return server

    def pin(self, shard: int, server: ServerId, now_us: int, duration_us: int) -> None:
        self._pins[shard] = (server, now_us + duration_us)

    def __len__(self) -> int:
        return len(self._pins)


class RerouteBudget:
    """Leaky-bucket cap on steering.

    Every eligible request drips ``f_max`` of a token into a bucket holding at
    most one token; a steer drains a full token. Between two steers at least
    ceil(1/f_max) eligible requests must therefore arrive, so any window holds
    at most ``f_max * eligible + 1`` steers. Counts over the trailing window W
    are kept for reporting.
    """

    _TOL = 1e-9

    def __init__(self, window_us: int, f_cap: float) -> None:
        self.window_us = window_us
        self.f_cap = f_cap
        self.tokens = 1.0
        self._eligible: Deque[int] = deque()
        self._steered: Deque[int] = deque()

    def _trim(self, now_us: int) -> None:
        lo = now_us - self.window_us
        while self._eligible and self._eligible[0] <= lo:
            self._eligible.popleft()
        while self._steered and self._steered[0] <= lo:
            self._steered.popleft()

    def admit(self, now_us: int, f_max: float) -> bool:
        """Record one eligible request; return True (and spend a token) if it may steer."""
        f = min(max(f_max, 0.0), self.f_cap)
        self._trim(now_us)
        self._eligible.append(now_us)
        self.tokens = min(1.0, self.tokens + f)
        if self.tokens >= 1.0 - self._TOL:
            self.tokens = 0.0
            self._steered.append(now_us)
            return True
        return False

    def window_counts(self, now_us: int) -> tuple[int, int]:
        self._trim(now_us)
        return len(self._eligible), len(self._steered)


@dataclass(frozen=True)
class RoutingKnobs:
    """The slice of the control knobs the router reads."""

    d: int
    delta_L: float
    delta_t: float
    f_max: float


@dataclass(frozen=True)
class RoutingDecision:
    request_id: int
    time_us: int
    primary: ServerId
    chosen: ServerId
    sampled: tuple[ServerId, ...] = ()
    eligible: bool = False
    steered: bool = False
    pin_applied: bool = False
    constrained: bool = False
    snapshot_us: int = 0
    # snapshot loads of primary and chosen target, kept for the Lyapunov audit
    L_primary: Optional[float] = None
    L_chosen: Optional[float] = None
    d: int = 0
    delta_L: float = 0.0
    delta_t: float = 0.0
    feasible: tuple[ServerId, ...] = field(default=(), compare=False)


def route(request: Request, snapshot: TelemetrySnapshot, knobs: RoutingKnobs, ring: HashRing,
          pins: PinTable, budget: RerouteBudget, rng: Rng, *, now_us: int, K_f: int,
          pin_us: int, constraint: Optional[ServerId] = None) -> RoutingDecision:
    key = request.key
    primary = ring.owner(key.shard)
    base = dict(request_id=request.id, time_us=now_us, primary=primary,
                snapshot_us=snapshot.snapshot_us, d=knobs.d, delta_L=knobs.delta_L,
                delta_t=knobs.delta_t)
    if constraint is not None:
        return RoutingDecision(chosen=constraint, constrained=True, feasible=(constraint,), **base)

    fs = feasible_set(ring, key, K_f)
    pinned = pins.lookup(key.shard, now_us)
    if pinned is not None and pinned in fs:
        return RoutingDecision(chosen=pinned, pin_applied=True, feasible=fs.servers, **base)

    others = list(fs.servers[1:])
    k = min(knobs.d, len(others))
    if k == 0:
        return RoutingDecision(chosen=primary, feasible=fs.servers, **base)
    sampled = tuple(rng.sample(others, k))

    Lp = snapshot.queue[primary]
    p50p = snapshot.p50[primary]
    if p50p is None:
        return RoutingDecision(chosen=primary, sampled=sampled, feasible=fs.servers, **base)
    eligible = []
    for j in sampled:
        p50j = snapshot.p50[j]
        if p50j is None:
            continue
        # margins written as differences so the Lyapunov audit sees the same float
        if Lp - snapshot.queue[j] >= knobs.delta_L and p50p - p50j >= knobs.delta_t:
            eligible.append(j)
    if not eligible:
        return RoutingDecision(chosen=primary, sampled=sampled, feasible=fs.servers, **base)

    if not budget.admit(now_us, knobs.f_max):
        return RoutingDecision(chosen=primary, sampled=sampled, eligible=True,
                               feasible=fs.servers, **base)
    best = min(snapshot.queue[j] for j in eligible)
    ties = [j for j in eligible if snapshot.queue[j] == best]
    target = ties[0] if len(ties) == 1 else rng.choice(ties)
    pins.pin(key.shard, target, now_us, pin_us)
    return RoutingDecision(chosen=target, sampled=sampled, eligible=True, steered=True,
                           L_primary=Lp, L_chosen=snapshot.queue[target],
                           feasible=fs.servers, **base)


class RoundRobinCursor:
    __slots__ = ("m", "counter")

    def __init__(self, m: int, counter: int = 0) -> None:
        if m < 1:
            raise ValueError("round robin needs m >= 1")
        self.m = m
        self.counter = counter


def round_robin_route(request: Optional[Request], state: RoundRobinCursor) -> ServerId:
    server = state.counter % state.m
    state.counter += 1
    return server


class RoundRobinScheduler:
    """Sequential assignment across servers.

    ``scope="global"`` keeps one cursor for the whole proxy. ``scope="session"``
    gives every client session its own cursor starting at server 0, which is how
    independent clients each walking the target list behave.
    """

    def __init__(self, m: int, scope: str = "session") -> None:
        if scope not in ("global", "session"):
            raise ValueError(f"unknown round-robin scope {scope!r}")
        self.m = m
        self.scope = scope
        self._global = RoundRobinCursor(m)
        self._sessions: dict[int, RoundRobinCursor] = {}

    def route(self, request: Request) -> ServerId:
        if self.scope == "global":
            return round_robin_route(request, self._global)
        cur = self._sessions.get(request.session)
        if cur is None:
            cur = self._sessions[request.session] = RoundRobinCursor(self.m)
        return round_robin_route(request, cur)

    def end_session(self, session: int) -> None:
        self._sessions.pop(session, None)
