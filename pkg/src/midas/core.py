"""Shared domain types: identifiers, requests, simulated time and seeded RNG streams.

Time is kept as integer microseconds everywhere inside the simulator and only
converted to milliseconds for reporting. Hashing uses xxHash64 (seed 0) over the
UTF-8 bytes of the path; golden values in the tests pin that choice.
"""

from __future__ import annotations

import enum
import random
from dataclasses import dataclass
from typing import Optional

import xxhash

US_PER_MS = 1000

ServerId = int


def ms_to_us(ms: float) -> int:
    return int(round(ms * US_PER_MS))


def us_to_ms(us: int) -> float:
    return us / US_PER_MS


def fmt_ms(us: int) -> str:
    """Render an integer microsecond time as an exact millisecond string."""
    sign = "-" if us < 0 else ""
    q, r = divmod(abs(us), US_PER_MS)
    return f"{sign}{q}.{r:03d}"


def hash_key(path: str) -> int:
    """64-bit xxHash of ``path``. Stable across runs and platforms."""
    if not path:
        raise ValueError("hash_key: path must be non-empty")
    return xxhash.xxh64_intdigest(path.encode("utf-8"), seed=0)


def hash64(data: str, seed: int = 0) -> int:
    return xxhash.xxh64_intdigest(data.encode("utf-8"), seed=seed & 0xFFFFFFFFFFFFFFFF)


@dataclass(frozen=True, slots=True)
class NamespaceKey:
    path: str
    shard: int

    @classmethod
    def of(cls, path: str) -> "NamespaceKey":
        return cls(path, hash_key(path))

    def prefix(self, depth: int = 1) -> str:
        parts = [p for p in self.path.split("/") if p]
        return "/" + "/".join(parts[:depth])


class OpKind(str, enum.Enum):
    LOOKUP = "lookup"
    GETATTR = "getattr"
    READDIR = "readdir"
    CREATE = "create"
    STAT = "stat"
    UNLINK = "unlink"
    OPEN = "open"

    @property
    def is_write(self) -> bool:
        return self in WRITE_OPS

    @property
    def cacheable(self) -> bool:
        return self in CACHEABLE_OPS


WRITE_OPS = frozenset({OpKind.CREATE, OpKind.UNLINK})
# open may carry O_CREAT, so it is neither cached nor treated as a mutation
CACHEABLE_OPS = frozenset({OpKind.LOOKUP, OpKind.GETATTR, OpKind.READDIR, OpKind.STAT})


@dataclass(slots=True)
class Request:
    id: int
    key: NamespaceKey
    op_kind: OpKind
    arrival_us: int
    is_write: bool
    session: int = 0
    session_seq: int = 0
    # request must be served by the key's owning server (lock ownership etc.)
    owner_bound: bool = False

    def __post_init__(self) -> None:
        if self.is_write != self.op_kind.is_write:
            raise ValueError(f"request {self.id}: is_write inconsistent with {self.op_kind.value}")

    @property
    def arrival_ms(self) -> float:
        return us_to_ms(self.arrival_us)


class SimClock:
    """Monotone simulated clock in integer microseconds."""

    __slots__ = ("now",)

    def __init__(self, now: int = 0) -> None:
        if now < 0:
            raise ValueError("clock cannot start before zero")
        self.now = now

    def advance(self, t: int) -> None:
        if t < self.now:
            raise RuntimeError(f"clock moved backwards: {t} < {self.now}")
        self.now = t

    @property
    def now_ms(self) -> float:
        return us_to_ms(self.now)


class Rng(random.Random):
    """``random.Random`` that remembers its seed and can derive named sub-streams."""

    def __new__(cls, seed: int, label: str = "") -> "Rng":
        return super().__new__(cls)

    def __init__(self, seed: int, label: str = "") -> None:
        self.seed_value = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.label = label
        super().__init__(self.seed_value)

    def substream(self, label: str) -> "Rng":
        return rng_substream(self, label)

    def __repr__(self) -> str:
        return f"Rng(seed={self.seed_value}, label={self.label!r})"


def rng_substream(parent: Rng, label: str) -> Rng:
    if not label:
        raise ValueError("substream label must be non-empty")
    path = f"{parent.label}/{label}" if parent.label else label
    return Rng(hash64(path, seed=parent.seed_value), path)


def resolve_seed(cli_seed: Optional[int], config_seed: Optional[int], default: int = 0) -> int:
    """CLI flag beats config file beats the fixed default."""
    if cli_seed is not None:
        return cli_seed
    if config_seed is not None:
        return config_seed
    return default
