"""Cooperative metadata cache: lease or adaptive-TTL validity, per-class
invalidation hazard, LRU capacity and in-process gossip between proxies."""

from __future__ import annotations

import enum
import math
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Any, Iterable, Optional, Sequence

from .core import NamespaceKey, OpKind, Rng, hash64

DEFAULT_CAPACITY = 64 * 1024


class CacheMode(str, enum.Enum):
    OFF = "off"
    LEASE = "lease"
    TTL = "ttl"


class CacheContractError(RuntimeError):
    """A caller asked the cache about an operation that must never be cached."""


def class_id(key: NamespaceKey, op_kind: OpKind, depth: int = 1, backend: str = "mds") -> str:
    return f"{backend}:{key.prefix(depth)}:{op_kind.value}"


@dataclass
class CacheClass:
    id: str
    hazard: float = 0.0  # invalidations per ms
    write_fraction: float = 0.0
    ttl_ms: float = 0.0
    last_invalidation_ms: Optional[float] = None
    # raw counters for the current slow interval
    requests: int = 0
    writes: int = 0
    hits: int = 0
    lookups: int = 0
    stale_serves: int = 0


def hazard_update(cls: CacheClass, now_ms: float, beta: float = 0.1,
                  first_gap_ms: Optional[float] = None) -> CacheClass:
    """Fold one observed invalidation into the class hazard estimate.

    The first invalidation has no predecessor; the hazard is then seeded as
    1/first_gap_ms (the warmup length by convention) without an EWMA step.
    A zero gap is clamped to one microsecond.
    """
    if cls.last_invalidation_ms is None:
        if first_gap_ms is None or first_gap_ms <= 0:
            raise ValueError("first invalidation needs a positive first_gap_ms")
        cls.hazard = 1.0 / first_gap_ms
    else:
        gap = max(now_ms - cls.last_invalidation_ms, 1e-3)
        cls.hazard = (1.0 - beta) * cls.hazard + beta / gap
    cls.last_invalidation_ms = now_ms
    return cls


def ttl_update(cls: CacheClass, p_star: float, lease_remaining_ms: Optional[float],
               gamma: float, W_high: float, *, ttl_min_ms: float,
               ttl_max_ms: float) -> float:
    if not 0.0 < p_star < 1.0:
        raise ValueError("p_star must be in (0, 1)")
    if cls.hazard < 0:
        raise ValueError("hazard must be non-negative")
    if cls.hazard == 0:
        ttl = ttl_max_ms
    else:
        ttl = min(-math.log1p(-p_star) / cls.hazard, ttl_max_ms)
    if lease_remaining_ms is not None:
        ttl = min(ttl, lease_remaining_ms)
    if cls.write_fraction > W_high:
        ttl *= gamma
    return max(ttl, ttl_min_ms)


@dataclass
class CacheEntry:
    key: NamespaceKey
    op_kind: OpKind
    value: Any
    inserted_ms: float
    deadline_ms: float
    mode: CacheMode
    class_id: str

    @property
    def value_hash(self) -> int:
        return hash64(repr(self.value))


@dataclass(frozen=True)
class GossipDigest:
    origin: int
    emitted_ms: float
    entries: tuple[CacheEntry, ...] = field(default=())


class ProxyCache:
    """One proxy's cache. Entries are keyed by (path, op_kind)."""

    def __init__(self, proxy_id: int = 0, capacity: int = DEFAULT_CAPACITY,
                 mode: CacheMode = CacheMode.LEASE) -> None:
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.proxy_id = proxy_id
        self.capacity = capacity
        self.mode = mode
        self._entries: OrderedDict[tuple[str, OpKind], CacheEntry] = OrderedDict()
        self._by_path: dict[str, set[OpKind]] = {}
        # latest invalidation seen per path; a lease granted before it is void
        self._revoked_at: dict[str, float] = {}
        self.evictions = 0

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, item: tuple[str, OpKind]) -> bool:
        return item in self._entries

    def _drop(self, k: tuple[str, OpKind]) -> None:
        del self._entries[k]
        ops = self._by_path.get(k[0])
        if ops is not None:
            ops.discard(k[1])
            if not ops:
                del self._by_path[k[0]]

    def lookup(self, key: NamespaceKey, op_kind: OpKind, now_ms: float) -> Optional[CacheEntry]:
        if not op_kind.cacheable:
            raise CacheContractError(f"{op_kind.value} is not a cacheable operation")
        k = (key.path, op_kind)
        e = self._entries.get(k)
        if e is None:
            return None
        if not now_ms < e.deadline_ms:
            self._drop(k)
            return None
        self._entries.move_to_end(k)
        return e

    def insert(self, key: NamespaceKey, op_kind: OpKind, value: Any, now_ms: float,
               deadline_ms: float, class_id: str, granted_ms: Optional[float] = None) -> bool:
        """Insert a fetched value. ``granted_ms`` is when the server produced it;
        a value produced before a known invalidation of the path is refused."""
        if not op_kind.cacheable:
            raise CacheContractError(f"{op_kind.value} is not a cacheable operation")
        granted = now_ms if granted_ms is None else granted_ms
        revoked = self._revoked_at.get(key.path)
        if revoked is not None and granted <= revoked:
            return False
        if deadline_ms <= now_ms:
            return False
        k = (key.path, op_kind)
        if k in self._entries:
            self._drop(k)
        self._entries[k] = CacheEntry(key, op_kind, value, now_ms, deadline_ms, self.mode, class_id)
        self._by_path.setdefault(key.path, set()).add(op_kind)
        while len(self._entries) > self.capacity:
            oldest = next(iter(self._entries))
            self._drop(oldest)
            self.evictions += 1
        return True

    def invalidate(self, path: str, now_ms: float) -> int:
        """Apply an invalidation token: drop every entry for ``path``."""
        self._revoked_at[path] = now_ms
        ops = self._by_path.get(path)
        if not ops:
            return 0
        n = 0
        for op in list(ops):
            self._drop((path, op))
            n += 1
        return n

    def digest(self, now_ms: float) -> GossipDigest:
        live = tuple(e for e in self._entries.values() if now_ms < e.deadline_ms)
        return GossipDigest(self.proxy_id, now_ms, live)

    def entries(self) -> Iterable[CacheEntry]:
        return self._entries.values()

    def merge(self, digest: GossipDigest, now_ms: float) -> None:
        """Adopt peer entries conservatively; never extends a local deadline."""
        for pe in digest.entries:
            if not now_ms < pe.deadline_ms:
                continue
            k = (pe.key.path, pe.op_kind)
            local = self._entries.get(k)
            if local is None or not now_ms < local.deadline_ms:
                if self.insert(pe.key, pe.op_kind, pe.value, now_ms, pe.deadline_ms,
                               pe.class_id, granted_ms=pe.inserted_ms):
                    self._entries[k].inserted_ms = pe.inserted_ms
            elif local.value_hash != pe.value_hash:
                self._drop(k)
            else:
                local.deadline_ms = min(local.deadline_ms, pe.deadline_ms)


def gossip_exchange(proxies: Sequence[ProxyCache], now_ms: float, rng: Rng) -> None:
    """Each proxy does a push-pull exchange with one uniformly chosen peer."""
    if len(proxies) < 2:
        return
    for i, p in enumerate(proxies):
        j = rng.randrange(len(proxies) - 1)
        if j >= i:
            j += 1
        q = proxies[j]
        dp, dq = p.digest(now_ms), q.digest(now_ms)
        in_p = {(e.key.path, e.op_kind): e.value_hash for e in dp.entries}
        in_q = {(e.key.path, e.op_kind): e.value_hash for e in dq.entries}
        # diverged copies: neither side can prove freshness, so both drop them
        conflict = {k for k, h in in_p.items() if k in in_q and in_q[k] != h}
        for k in conflict:
            p._drop(k)
            q._drop(k)
        q.merge(_without(dp, conflict), now_ms)
        p.merge(_without(dq, conflict), now_ms)


def _without(d: GossipDigest, keys: set) -> GossipDigest:
    if not keys:
        return d
    return GossipDigest(d.origin, d.emitted_ms,
                        tuple(e for e in d.entries if (e.key.path, e.op_kind) not in keys))
