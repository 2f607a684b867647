"""Event-driven wiring of clients, routing points, caches and metadata servers.

A request reaches its routing point (the MIDAS proxy, or the client itself for
round-robin) ``hop_in`` after it is issued, travels RTT/2 to the chosen server,
waits FIFO, is served, and the response travels back the same way. Cache hits
are answered at the proxy and never reach a server.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

from ..cache import CacheClass, CacheMode, ProxyCache, class_id, gossip_exchange, hazard_update
from ..config import ExperimentConfig, WorkloadSpec
from ..control import (ControlKnobs, ControlTargets, HysteresisState, WarmupTrace, delta_v,
                       fast_tick, slow_tick, warmup_targets)
from ..core import CACHEABLE_OPS, Request, Rng, ms_to_us, us_to_ms
from ..metrics import RunResult
from ..routing import HashRing, PinTable, RerouteBudget, RoundRobinScheduler, route
from ..telemetry import PressureInputs, Telemetry, imbalance, pressure
from .engine import EventKind, EventQueue
from .server import ServerModel, finish, serve
from .workload import generate_workload

log = logging.getLogger(__name__)

CONSISTENT_HASH = "consistent_hash"
_CACHEABLE = sorted(CACHEABLE_OPS, key=lambda op: op.value)


class InvariantViolation(RuntimeError):
    pass


@dataclass
class _Job:
    req: Request
    proxy: int
    server: int
    enqueued_us: int = 0
    started_us: int = 0
    value: int = 0


@dataclass
class _Proxy:
    id: int
    knobs: ControlKnobs
    hyst: HysteresisState
    routing_rng: Rng
    jitter_rng: Rng
    pins: PinTable
    budget: RerouteBudget
    cache: Optional[ProxyCache]
    rr: Optional[RoundRobinScheduler]
    classes: dict = field(default_factory=dict)
    prefix_counts: dict = field(default_factory=dict)


def _request_row(r: Request) -> tuple:
    return (r.id, r.arrival_us, r.key.path, r.op_kind.value, r.is_write, r.session,
            r.session_seq, r.owner_bound)


class Simulation:
    def __init__(self, cfg: ExperimentConfig, seed: int, requests: Sequence[Request], *,
                 scheduler: Optional[str] = None, cache_mode: Optional[str] = None,
                 targets: Optional[ControlTargets] = None, duration_us: Optional[int] = None,
                 label: str = "main") -> None:
        self.cfg = cfg
        self.seed = seed
        self.scheduler = scheduler or cfg.scheduler
        self.requests = requests
        self.targets = targets
        self.ctl = cfg.control
        self.rtt_ms = cfg.rtt_ms
        mode = cache_mode or cfg.cache.mode
        self.cache_mode = CacheMode(mode) if self.scheduler == "midas" else CacheMode.OFF
        self.duration_us = duration_us or int(round(cfg.workload.duration_s * 1e6))
        self.m = cfg.m

        root = Rng(seed).substream(label)
        self.service_rng = root.substream("service")
        self.gossip_rng = root.substream("gossip")

        self.half_us = ms_to_us(cfg.rtt_ms / 2)
        self.hop_in_us = self.half_us if self.scheduler == "midas" else 0
        self.fast_us = ms_to_us(self.ctl.T_fast_ms)
        self.slow_us = ms_to_us(self.ctl.T_slow_ms)
        self.pin_us = ms_to_us(self.ctl.C_ms)
        self.hit_us = ms_to_us(cfg.cache.hit_ms)
        self.first_gap_ms = cfg.warmup.duration_s * 1000.0

        mean_us = ms_to_us(cfg.service.mean_ms)
        self.servers = [ServerModel(i, cfg.service.model, mean_us) for i in range(self.m)]
        self.ring = HashRing(range(self.m), cfg.routing.vnodes_per_server, seed)
        self.telemetry = Telemetry(self.m, self.ctl.alpha_fast, self.ctl.eps)
        self.versions: dict[str, int] = {}
        self.q = EventQueue()

        n_proxies = cfg.proxies
        self.proxies = []
        for p in range(n_proxies):
            cache = None
            if self.cache_mode is not CacheMode.OFF:
                cache = ProxyCache(p, cfg.cache.capacity, self.cache_mode)
            self.proxies.append(_Proxy(
                id=p,
                knobs=ControlKnobs.initial(self.ctl, cfg.rtt_ms),
                hyst=HysteresisState(),
                routing_rng=root.substream(f"routing/{p}"),
                jitter_rng=root.substream(f"jitter/{p}"),
                pins=PinTable(),
                budget=RerouteBudget(ms_to_us(self.ctl.W_ms), self.ctl.f_cap),
                cache=cache,
                rr=RoundRobinScheduler(self.m, cfg.routing.rr_scope)
                if self.scheduler == "round_robin" else None,
            ))

        self.queue_log: list = [(0, i, 0) for i in range(self.m)]
        self.completions: list = []
        self.decisions: list = []
        self.control_rows: list = []
        self.telemetry_rows: list = []
        self.cache_rows: list = []
        self.B_series: list = []
        self.rtts_ms: list = []
        self.counters = dict(arrivals=0, completions=0, cache_hits=0, cacheable_lookups=0,
                             routed_to_servers=0, served=0, steers=0, lyapunov_violations=0,
                             lease_stale_serves=0)

    # ---- event handlers ---------------------------------------------------

    def _log_queue(self, now: int, s: ServerModel) -> None:
        self.queue_log.append((now, s.id, s.queue_len))

    def _classes_for(self, proxy: _Proxy, prefix: str, key) -> list:
        ids = proxy.prefix_counts.get(prefix)
        if ids is None:
            ttl0 = self.ctl.ttl_min(self.rtt_ms)
            ids = []
            for op in _CACHEABLE:
                cid = class_id(key, op, self.cfg.cache.prefix_depth)
                proxy.classes[cid] = CacheClass(cid, ttl_ms=ttl0)
                ids.append(cid)
            proxy.prefix_counts[prefix] = [ids, 0, 0]
        return proxy.prefix_counts[prefix]

    def _on_arrival(self, now: int, idx: int) -> None:
        req = self.requests[idx]
        if idx + 1 < len(self.requests):
            nxt = self.requests[idx + 1]
            if nxt.arrival_us < self.duration_us:
                self.q.schedule(nxt.arrival_us + self.hop_in_us, EventKind.ARRIVAL, idx + 1)
        self.counters["arrivals"] += 1
        proxy = self.proxies[req.session % len(self.proxies)]

        if proxy.cache is not None:
            prefix = req.key.prefix(self.cfg.cache.prefix_depth)
            entry = self._classes_for(proxy, prefix, req.key)
            entry[1] += 1
            if req.is_write:
                entry[2] += 1
            if req.op_kind.cacheable:
                cls = proxy.classes[class_id(req.key, req.op_kind, self.cfg.cache.prefix_depth)]
                cls.lookups += 1
                self.counters["cacheable_lookups"] += 1
                hit = proxy.cache.lookup(req.key, req.op_kind, us_to_ms(now))
                if hit is not None:
                    stale = hit.value != self.versions.get(req.key.path, 0)
                    cls.hits += 1
                    if stale:
                        cls.stale_serves += 1
                        if self.cache_mode is CacheMode.LEASE:
                            self.counters["lease_stale_serves"] += 1
                    done = now + self.hit_us
                    self.counters["cache_hits"] += 1
                    self.counters["completions"] += 1
                    self.completions.append((req.id, done, done + self.hop_in_us - req.arrival_us,
                                             -1, stale))
                    return

        server = self._choose(now, req, proxy)
        self.counters["routed_to_servers"] += 1
        self.q.schedule(now + self.half_us, EventKind.ENQUEUE, _Job(req, proxy.id, server))

    def _choose(self, now: int, req: Request, proxy: _Proxy) -> int:
        if self.scheduler == "round_robin":
            server = proxy.rr.route(req)
            self.decisions.append((now, req.id, proxy.id, req.key.path, server, server, False,
                                   False, False, False, 0, 0, 0.0, 0.0, None, None, 0))
            return server
        if self.scheduler == CONSISTENT_HASH:
            return self.ring.owner(req.key.shard)

        snap = self.telemetry.snapshot
        if now - snap.snapshot_us > self.fast_us:
            raise InvariantViolation(f"telemetry snapshot older than one fast interval at {now}")
        constraint = self.ring.owner(req.key.shard) if req.owner_bound else None
        knobs = proxy.knobs
        dec = route(req, snap, knobs.routing(), self.ring, proxy.pins, proxy.budget,
                    proxy.routing_rng, now_us=now, K_f=self.cfg.routing.feasible_size,
                    pin_us=self.pin_us, constraint=constraint)
        if dec.chosen not in dec.feasible:
            raise InvariantViolation(f"request {req.id} routed outside its feasible set")
        if dec.steered:
            self.counters["steers"] += 1
            if delta_v(dec.L_primary, dec.L_chosen, 1) > -2:
                self.counters["lyapunov_violations"] += 1
                if self.cfg.strict_invariants:
                    raise InvariantViolation(
                        f"steer of request {req.id} at t={us_to_ms(now)}ms: "
                        f"L_p={dec.L_primary} L_j={dec.L_chosen} gives delta_v "
                        f"{delta_v(dec.L_primary, dec.L_chosen, 1)} > -2 "
                        f"(delta_L={knobs.delta_L}, delta_L_min={self.ctl.delta_L_min})")
        self.decisions.append((now, req.id, proxy.id, req.key.path, dec.primary, dec.chosen,
                               dec.eligible, dec.steered, dec.pin_applied, dec.constrained,
                               knobs.d, knobs.delta_L, knobs.delta_t_ms, knobs.f_max,
                               dec.L_primary, dec.L_chosen, dec.snapshot_us))
        return dec.chosen

    def _start(self, now: int, s: ServerModel) -> None:
        job = s.queue.popleft()
        job.started_us = now
        self.q.schedule(serve(s, job, now, self.service_rng), EventKind.SERVICE_COMPLETE, s.id)

    def _on_enqueue(self, now: int, job: _Job) -> None:
        s = self.servers[job.server]
        job.enqueued_us = now
        s.queue.append(job)
        if not s.busy:
            self._start(now, s)
        self._log_queue(now, s)

    def _on_complete(self, now: int, server_id: int) -> None:
        s = self.servers[server_id]
        job = finish(s)
        self.counters["served"] += 1
        req = job.req
        path = req.key.path
        if req.is_write:
            self.versions[path] = self.versions.get(path, 0) + 1
            self._invalidate(now, req, job.proxy)
        job.value = self.versions.get(path, 0)
        if s.queue:
            self._start(now, s)
        self._log_queue(now, s)
        self.rtts_ms.append(us_to_ms(2 * self.half_us))
        self.q.schedule(now + self.half_us, EventKind.RESPONSE, (job, now))

    def _invalidate(self, now: int, req: Request, origin: int) -> None:
        if self.cache_mode is CacheMode.OFF:
            return
        now_ms = us_to_ms(now)
        prefix = req.key.prefix(self.cfg.cache.prefix_depth)
        for proxy in self.proxies:
            # leases are revoked everywhere; without leases only the forwarding proxy notices
            if self.cache_mode is CacheMode.LEASE:
                proxy.cache.invalidate(req.key.path, now_ms)
            elif proxy.id != origin:
                continue
            ids = self._classes_for(proxy, prefix, req.key)[0]
            for cid in ids:
                hazard_update(proxy.classes[cid], now_ms, self.ctl.beta_slow,
                              first_gap_ms=self.first_gap_ms)

    def _on_response(self, now: int, payload: tuple) -> None:
        job, served_at = payload
        req = job.req
        latency = now + self.hop_in_us - req.arrival_us
        self.telemetry.record_latency(job.server, latency / 1000.0)
        self.counters["completions"] += 1
        self.completions.append((req.id, now, latency, job.server, False))
        proxy = self.proxies[job.proxy]
        if proxy.cache is None or not req.op_kind.cacheable:
            return
        now_ms = us_to_ms(now)
        cid = class_id(req.key, req.op_kind, self.cfg.cache.prefix_depth)
        if self.cache_mode is CacheMode.LEASE:
            deadline = us_to_ms(served_at) + self.cfg.cache.lease_ms
        else:
            deadline = now_ms + proxy.classes[cid].ttl_ms
        proxy.cache.insert(req.key, req.op_kind, job.value, now_ms, deadline, cid,
                           granted_ms=us_to_ms(served_at))

    def _on_fast_tick(self, now: int) -> None:
        snap = self.telemetry.tick(now, [s.queue_len for s in self.servers])
        for row in self.telemetry.rows(now):
            self.telemetry_rows.append((row.time_us, row.server, row.raw_queue, row.ewma_queue,
                                        row.p50, row.p99))
        B = imbalance(snap.queue, self.ctl.eps)
        self.B_series.append(B)
        p99g = snap.p99_global()
        if self.scheduler == "midas":
            P = pressure(PressureInputs(B, p99g, self.targets.B_tgt, self.targets.P99_tgt,
                                        self.ctl.w1, self.ctl.w2, self.ctl.eps))
            for proxy in self.proxies:
                proxy.knobs, proxy.hyst = fast_tick(proxy.hyst, proxy.knobs, P, proxy.jitter_rng,
                                                    self.ctl, self.rtt_ms)
                elig, steer = proxy.budget.window_counts(now)
                k = proxy.knobs
                self.control_rows.append((now, proxy.id, B, p99g, P, k.d, k.delta_L,
                                          k.delta_t_ms, k.f_max, steer, elig))
        else:
            self.control_rows.append((now, 0, B, p99g, None, None, None, None, None, None, None))
        if now + self.fast_us < self.duration_us:
            self.q.schedule(now + self.fast_us, EventKind.FAST_TICK)

    def _on_slow_tick(self, now: int) -> None:
        for proxy in self.proxies:
            for ids, n_req, n_wr in proxy.prefix_counts.values():
                for cid in ids:
                    proxy.classes[cid].requests = n_req
                    proxy.classes[cid].writes = n_wr
            for v in proxy.prefix_counts.values():
                v[1] = v[2] = 0
            proxy.knobs = slow_tick(proxy.classes.values(), proxy.knobs, self.ctl, self.rtt_ms)
            for cid in sorted(proxy.classes):
                c = proxy.classes[cid]
                ratio = c.hits / c.lookups if c.lookups else None
                self.cache_rows.append((now, proxy.id, cid, c.hazard, c.write_fraction, c.ttl_ms,
                                        ratio, c.stale_serves))
                c.hits = c.lookups = c.stale_serves = 0
        if len(self.proxies) > 1:
            self.q.schedule(now, EventKind.GOSSIP)
        if now + self.slow_us < self.duration_us:
            self.q.schedule(now + self.slow_us, EventKind.SLOW_TICK)

    def _on_gossip(self, now: int) -> None:
        gossip_exchange([p.cache for p in self.proxies], us_to_ms(now), self.gossip_rng)

    # ---- driver -------------------------------------------------------------

    def run(self) -> RunResult:
        if self.scheduler == "midas" and self.targets is None:
            raise ValueError("midas runs need control targets (run warmup first)")
        q = self.q
        if self.requests and self.requests[0].arrival_us < self.duration_us:
            q.schedule(self.requests[0].arrival_us + self.hop_in_us, EventKind.ARRIVAL, 0)
        if self.fast_us < self.duration_us:
            q.schedule(self.fast_us, EventKind.FAST_TICK)
        if self.cache_mode is not CacheMode.OFF and self.slow_us < self.duration_us:
            q.schedule(self.slow_us, EventKind.SLOW_TICK)
        handlers = {
            EventKind.ARRIVAL: self._on_arrival,
            EventKind.ENQUEUE: self._on_enqueue,
            EventKind.SERVICE_COMPLETE: self._on_complete,
            EventKind.RESPONSE: self._on_response,
        }
        while len(q) and q.peek_time() < self.duration_us:
            ev = q.pop()
            h = handlers.get(ev.kind)
            if h is not None:
                h(ev.time, ev.payload)
            elif ev.kind is EventKind.FAST_TICK:
                self._on_fast_tick(ev.time)
            elif ev.kind is EventKind.SLOW_TICK:
                self._on_slow_tick(ev.time)
            elif ev.kind is EventKind.GOSSIP:
                self._on_gossip(ev.time)
        return self._result()

    def _result(self) -> RunResult:
        in_servers = sum(s.queue_len for s in self.servers)
        c = self.counters
        c["in_system"] = c["arrivals"] - c["completions"]
        c["in_servers"] = in_servers
        c["in_flight"] = c["in_system"] - in_servers
        if c["in_flight"] < 0:
            raise InvariantViolation("request conservation broken")
        arrivals = [_request_row(r) for r in self.requests if r.arrival_us < self.duration_us]
        return RunResult(
            name=self.cfg.name, scheduler=self.scheduler, seed=self.seed, m=self.m,
            duration_us=self.duration_us, arrivals=arrivals, queue_log=self.queue_log,
            completions=self.completions, decisions=self.decisions, control=self.control_rows,
            telemetry=self.telemetry_rows, cache=self.cache_rows,
            targets=None if self.targets is None else self.targets.__dict__.copy(),
            counters=dict(c), config=self.cfg.with_seed(self.seed).to_dict(),
        )


class ExperimentWarmup:
    """Runs the low-utilisation warmup: plain consistent hashing, no cache."""

    def __init__(self, cfg: ExperimentConfig, seed: int) -> None:
        self.cfg = cfg
        self.seed = seed

    def run_warmup(self, duration_ms: float, utilization_cap: float) -> WarmupTrace:
        cfg = self.cfg
        peak = cfg.m * 1000.0 / cfg.service.mean_ms
        spec = replace(cfg.workload, pattern="light", duration_s=duration_ms / 1000.0,
                       base_rate=utilization_cap * peak, zipf_s=0.0, max_arrivals=None)
        reqs = list(generate_workload(spec, Rng(self.seed).substream("warmup-workload")))
        sim = Simulation(cfg.replace(workload=spec), self.seed, reqs, scheduler=CONSISTENT_HASH,
                         cache_mode="off", label="warmup")
        res = sim.run()
        return WarmupTrace(sim.B_series, [c[2] / 1000.0 for c in res.completions], sim.rtts_ms,
                           duration_ms)


def build_requests(cfg: ExperimentConfig, seed: int) -> list[Request]:
    return list(generate_workload(cfg.workload, Rng(seed).substream("workload")))


def run_experiment(cfg: ExperimentConfig, seed: Optional[int] = None,
                   requests: Optional[Sequence[Request]] = None,
                   targets: Optional[ControlTargets] = None) -> RunResult:
    errs = cfg.validate()
    if errs:
        from ..config import ConfigError
        raise ConfigError(errs)
    seed = seed if seed is not None else (cfg.seed if cfg.seed is not None else 0)
    if requests is None:
        requests = build_requests(cfg, seed)
    if cfg.scheduler == "midas" and targets is None:
        targets = warmup_targets(ExperimentWarmup(cfg, seed), cfg.warmup.duration_s * 1000.0,
                                 cfg.warmup.utilization_cap)
    return Simulation(cfg, seed, requests, targets=targets).run()
