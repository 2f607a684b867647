"""Deterministic event queue ordered by (time, sequence number)."""

from __future__ import annotations

import enum
import heapq
from dataclasses import dataclass
from typing import Any, Optional


class EventKind(enum.IntEnum):
    ARRIVAL = 0
    ROUTE = 1
    ENQUEUE = 2
    SERVICE_COMPLETE = 3
    RESPONSE = 4
    FAST_TICK = 5
    SLOW_TICK = 6
    GOSSIP = 7
    INVALIDATION = 8


@dataclass(frozen=True, slots=True)
class SimEvent:
    time: int
    seq: int
    kind: EventKind
    payload: Any = None


class CausalityError(RuntimeError):
    pass


class EventQueue:
    """Min-heap of events; pops in (time, seq) order and refuses to go back in time."""

    def __init__(self) -> None:
        self._heap: list[tuple[int, int, int, Any]] = []
        self._seq = 0
        self.now = 0
        self.processed = 0

    def __len__(self) -> int:
        return len(self._heap)

    def schedule(self, time: int, kind: EventKind, payload: Any = None) -> None:
        if time < self.now:
            raise CausalityError(f"event {kind.name} scheduled at {time} < now {self.now}")
        heapq.heappush(self._heap, (time, self._seq, kind, payload))
        self._seq += 1

    def peek_time(self) -> Optional[int]:
        return self._heap[0][0] if self._heap else None

    def pop(self) -> SimEvent:
        time, seq, kind, payload = heapq.heappop(self._heap)
        if time < self.now:
            raise CausalityError(f"out-of-order event at {time} < {self.now}")
        self.now = time
        self.processed += 1
        return SimEvent(time, seq, EventKind(kind), payload)
