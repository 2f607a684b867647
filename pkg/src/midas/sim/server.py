"""Simulated metadata server: FIFO queue, one request in service at a time."""

from __future__ import annotations

from collections import deque
from typing import Any, Deque, Optional

from ..core import Rng, ServerId


class ServerModel:
    __slots__ = ("id", "service_model", "mean_us", "queue", "busy", "served", "in_service")

    def __init__(self, server_id: ServerId, service_model: str = "constant",
                 mean_us: int = 100_000) -> None:
        if service_model not in ("constant", "exponential"):
            raise ValueError(f"unknown service model {service_model!r}")
        self.id = server_id
        self.service_model = service_model
        self.mean_us = mean_us
        self.queue: Deque[Any] = deque()
        self.busy = False
        self.in_service: Optional[Any] = None
        self.served = 0

    @property
    def queue_len(self) -> int:
        """Waiting plus in service."""
        return len(self.queue) + (1 if self.busy else 0)

    def service_time(self, rng: Rng) -> int:
        if self.service_model == "constant":
            return self.mean_us
        # at least one microsecond so completions stay strictly after starts
        return max(1, int(round(rng.expovariate(1.0 / self.mean_us))))


def serve(server: ServerModel, job: Any, now_us: int, rng: Rng) -> int:
    """Start ``job`` on an idle server; return its completion time."""
    if server.busy:
        raise RuntimeError(f"server {server.id} is already busy")
    server.busy = True
    server.in_service = job
    return now_us + server.service_time(rng)


def finish(server: ServerModel) -> Any:
    job = server.in_service
    server.busy = False
    server.in_service = None
    server.served += 1
    return job
