"""Closed-form checks of the simulator pieces: an M/M/1 queue built from the
event queue and server model, and cache staleness under Poisson invalidations."""

from __future__ import annotations

import math
from dataclasses import dataclass

from ..cache import CacheClass, CacheMode, ProxyCache, ttl_update
from ..core import NamespaceKey, OpKind, Rng, us_to_ms
from .engine import EventKind, EventQueue
from .server import ServerModel, finish, serve


class UnstableQueueError(ValueError):
    pass


@dataclass(frozen=True)
class MM1Result:
    lam: float
    mu: float
    arrivals: int
    mean_sojourn_ms: float
    expected_ms: float

    @property
    def rel_error(self) -> float:
        return abs(self.mean_sojourn_ms - self.expected_ms) / self.expected_ms


def mm1_expected_sojourn_ms(lam: float, mu: float) -> float:
    if lam >= mu:
        raise UnstableQueueError(f"unstable queue: arrival rate {lam}/s >= service rate {mu}/s")
    return 1000.0 / (mu - lam)


def mm1_validation(lam: float = 5.0, mu: float = 10.0, arrivals: int = 1_000_000,
                   seed: int = 0) -> MM1Result:
    """Single exponential server fed by Poisson arrivals, driven through the event queue."""
    if lam <= 0 or mu <= 0:
        raise ValueError("rates must be positive")
    expected = mm1_expected_sojourn_ms(lam, mu)
    root = Rng(seed).substream("mm1")
    arr_rng, svc_rng = root.substream("arrivals"), root.substream("service")
    server = ServerModel(0, "exponential", int(round(1e6 / mu)))
    q = EventQueue()
    t = 0.0
    issued = 0
    total_us = 0
    done = 0

    def next_arrival() -> None:
        nonlocal t, issued
        if issued < arrivals:
            t += arr_rng.expovariate(lam)
            q.schedule(max(int(t * 1e6), q.now), EventKind.ARRIVAL, int(t * 1e6))
            issued += 1

    next_arrival()
    while len(q):
        ev = q.pop()
        if ev.kind is EventKind.ARRIVAL:
            server.queue.append(ev.time)
            if not server.busy:
                q.schedule(serve(server, server.queue.popleft(), ev.time, svc_rng),
                           EventKind.SERVICE_COMPLETE)
            next_arrival()
        else:
            arrived = finish(server)
            total_us += ev.time - arrived
            done += 1
            if server.queue:
                q.schedule(serve(server, server.queue.popleft(), ev.time, svc_rng),
                           EventKind.SERVICE_COMPLETE)
    return MM1Result(lam, mu, done, us_to_ms(total_us / done), expected)


@dataclass(frozen=True)
class StalenessResult:
    mode: str
    lookups: int
    hits: int
    stale: int
    invalidations: int
    ttl_ms: float

    @property
    def stale_fraction(self) -> float:
        return self.stale / self.lookups


def staleness_experiment(mode: str = "ttl", hazard_per_ms: float = 1e-3,
                         lookup_rate_per_ms: float = 10.0, lookups: int = 1_000_000,
                         p_star: float = 1e-4, lease_ms: float = 30_000.0,
                         seed: int = 0) -> StalenessResult:
    """One key read at Poisson rate and rewritten at Poisson rate ``hazard_per_ms``.

    A miss fetches the current version. In TTL mode the proxy never hears about
    writes and trusts the entry for the formula TTL; in lease mode every write
    revokes the entry. A hit is stale when its version lags the ground truth.
    """
    cache_mode = CacheMode(mode)
    if cache_mode is CacheMode.OFF:
        raise ValueError("staleness needs a caching mode")
    root = Rng(seed).substream("staleness")
    look_rng, inv_rng = root.substream("lookups"), root.substream("invalidations")
    key = NamespaceKey.of("/hot/file")
    op = OpKind.GETATTR
    cls = CacheClass("mds:/hot:getattr", hazard=hazard_per_ms)
    ttl = ttl_update(cls, p_star, None, 0.5, 1.0, ttl_min_ms=0.0, ttl_max_ms=math.inf)
    cache = ProxyCache(0, 16, cache_mode)

    version = 0
    n_inv = 0
    hits = stale = 0
    t_look = look_rng.expovariate(lookup_rate_per_ms)
    t_inv = inv_rng.expovariate(hazard_per_ms)
    done = 0
    while done < lookups:
        if t_inv <= t_look:
            version += 1
            n_inv += 1
            if cache_mode is CacheMode.LEASE:
                cache.invalidate(key.path, t_inv)
            t_inv += inv_rng.expovariate(hazard_per_ms)
            continue
        now = t_look
        e = cache.lookup(key, op, now)
        if e is None:
            deadline = now + (lease_ms if cache_mode is CacheMode.LEASE else ttl)
            cache.insert(key, op, version, now, deadline, cls.id)
        else:
            hits += 1
            stale += e.value != version
        done += 1
        t_look += look_rng.expovariate(lookup_rate_per_ms)
    return StalenessResult(mode, done, hits, stale, n_inv, ttl)
