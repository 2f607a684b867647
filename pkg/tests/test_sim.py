import dataclasses
import statistics
from collections import Counter

import pytest
from hypothesis import given, strategies as st

from midas.config import CacheConfig, ExperimentConfig, RoutingConfig, WorkloadSpec, load_config
from midas.core import NamespaceKey, OpKind, Request, Rng
from midas.metrics import reroute_cap_violations
from midas.sim import (CausalityError, EventKind, EventQueue, InvariantViolation, ServerModel,
                       build_requests, generate_workload, run_experiment)
from midas.sim.server import finish, serve
from midas.sim.workload import ZipfKeys, rate_at

from conftest import ROOT


# ---- engine ---------------------------------------------------------------

@given(st.lists(st.integers(0, 10_000), min_size=1, max_size=200))
def test_events_pop_in_time_then_insertion_order(times):
    q = EventQueue()
    for i, t in enumerate(times):
        q.schedule(t, EventKind.ARRIVAL, i)
    popped = [q.pop() for _ in times]
    assert [(e.time, e.payload) for e in popped] == sorted((t, i) for i, t in enumerate(times))


def test_scheduling_into_the_past_is_refused():
    q = EventQueue()
    q.schedule(10, EventKind.ARRIVAL)
    q.pop()
    with pytest.raises(CausalityError):
        q.schedule(9, EventKind.ARRIVAL)
    q.schedule(10, EventKind.ARRIVAL)  # same instant is fine


# ---- server ---------------------------------------------------------------

def test_constant_service_completes_after_mean():
    s = ServerModel(0, "constant", 100_000)
    assert serve(s, "a", 0, Rng(0)) == 100_000
    with pytest.raises(RuntimeError):
        serve(s, "b", 0, Rng(0))
    assert finish(s) == "a" and not s.busy and s.served == 1


def test_two_queued_jobs_finish_back_to_back():
    s = ServerModel(0, "constant", 100_000)
    s.queue.extend(["a", "b"])
    done = []
    t = 0
    while s.queue:
        t = serve(s, s.queue.popleft(), t, Rng(0))
        done.append((finish(s), t))
    assert done == [("a", 100_000), ("b", 200_000)]


def test_exponential_service_mean():
    s = ServerModel(0, "exponential", 100_000)
    rng = Rng(3)
    draws = [s.service_time(rng) for _ in range(100_000)]
    assert min(draws) >= 1
    assert statistics.fmean(draws) == pytest.approx(100_000, rel=0.01)


# ---- workload -------------------------------------------------------------

def test_light_arrival_count_is_poisson():
    spec = WorkloadSpec(pattern="light", duration_s=10.0, base_rate=100.0)
    n = sum(1 for _ in generate_workload(spec, Rng(5)))
    # 3 sigma of Poisson(1000)
    assert abs(n - 1000) <= 95


def test_bursty_rate_ratio():
    spec = WorkloadSpec(pattern="bursty", duration_s=300.0, base_rate=1.0, burst_amplitude=100.0,
                        burst_len_s=2.0, burst_gap_s=28.0)
    assert rate_at(spec, 27.9) == 1.0 and rate_at(spec, 28.5) == 100.0
    reqs = list(generate_workload(spec, Rng(1)))
    in_burst = sum(1 for r in reqs if (r.arrival_us / 1e6) % 30.0 >= 28.0)
    outside = len(reqs) - in_burst
    ratio = (in_burst / 20.0) / (outside / 280.0)
    assert 80 <= ratio <= 125


def test_zipf_zero_is_uniform():
    keys = ZipfKeys(100, 0.0)
    rng = Rng(2)
    counts = Counter(keys.draw_rank(rng) for _ in range(1_000_000))
    assert len(counts) == 100
    assert all(abs(c - 10_000) <= 1_000 for c in counts.values())


def test_zipf_head_heavier_than_tail():
    keys = ZipfKeys(1000, 1.0)
    rng = Rng(2)
    counts = Counter(keys.draw_rank(rng) for _ in range(100_000))
    # P(0)/P(1) = 2 for s = 1
    assert counts[0] / counts[1] == pytest.approx(2.0, rel=0.1)


def test_workload_is_seed_deterministic():
    spec = WorkloadSpec(pattern="periodic", duration_s=20.0, base_rate=20.0, zipf_s=0.8)
    a = [(r.arrival_us, r.key.path, r.op_kind) for r in generate_workload(spec, Rng(9))]
    b = [(r.arrival_us, r.key.path, r.op_kind) for r in generate_workload(spec, Rng(9))]
    c = [(r.arrival_us, r.key.path, r.op_kind) for r in generate_workload(spec, Rng(10))]
    assert a == b and a != c


# ---- whole runs -----------------------------------------------------------

def _small(**kw) -> ExperimentConfig:
    wl = kw.pop("workload", WorkloadSpec(pattern="skewed_zipf", duration_s=20.0, base_rate=40.0,
                                         zipf_s=1.0, key_universe=2000))
    return ExperimentConfig(name="small", m=kw.pop("m", 4), workload=wl, **kw)


def _req(i, t_ms, path="/a/x", session=0, seq=0):
    return Request(i, NamespaceKey.of(path), OpKind.GETATTR, int(t_ms * 1000), False, session, seq)


def test_round_robin_spreads_one_session_evenly():
    cfg = _small(m=3, scheduler="round_robin", rtt_ms=0.0)
    reqs = [_req(i, i * 1.0, f"/k/{i}", seq=i) for i in range(3)]
    res = run_experiment(cfg, 0, reqs)
    chosen = Counter(d[5] for d in res.decisions)
    assert sorted(chosen.values()) == [1, 1, 1]


def test_round_robin_global_scope():
    cfg = _small(m=3, scheduler="round_robin", routing=RoutingConfig(rr_scope="global"))
    reqs = [_req(i, i * 1.0, f"/k/{i}", session=i) for i in range(3)]
    res = run_experiment(cfg, 0, reqs)
    assert [d[5] for d in res.decisions] == [0, 1, 2]


def test_single_server_queue_grows_one_per_100ms():
    cfg = _small(m=1, scheduler="round_robin", rtt_ms=0.0,
                 workload=WorkloadSpec(duration_s=10.0))
    # one arrival every 50 ms into a 100 ms server
    reqs = [_req(i, i * 50.0, f"/k/{i}", seq=i) for i in range(200)]
    res = run_experiment(cfg, 0, reqs)
    by_time = {}
    for t, _, q in res.queue_log:
        by_time[t] = q
    for k in (1, 10, 50, 99):
        t = k * 100_000
        assert by_time[t] == k + 1


def test_arrival_stream_identical_across_schedulers():
    cfg = _small()
    reqs = build_requests(cfg, 4)
    rr = run_experiment(cfg.replace(scheduler="round_robin"), 4, reqs)
    md = run_experiment(cfg, 4, reqs)
    assert rr.arrival_hash() == md.arrival_hash()


@pytest.mark.parametrize("scheduler", ["round_robin", "midas"])
def test_requests_are_conserved(scheduler):
    res = run_experiment(_small(scheduler=scheduler), 2)
    c = res.counters
    assert c["arrivals"] == len(res.arrivals)
    assert c["arrivals"] == c["completions"] + c["in_servers"] + c["in_flight"]
    assert c["completions"] == len(res.completions)
    assert c["in_flight"] >= 0


def test_every_steer_lowers_the_potential():
    res = run_experiment(_small(), 3)
    steers = [d for d in res.decisions if d[7]]
    assert steers
    assert all(d[15] <= d[14] - 2 for d in steers)


def test_single_feasible_server_never_steers():
    res = run_experiment(_small(routing=RoutingConfig(feasible_size=1)), 3)
    assert res.counters["steers"] == 0
    assert all(d[4] == d[5] for d in res.decisions)


def test_lease_mode_multi_proxy_never_serves_stale():
    wl = WorkloadSpec(pattern="skewed_zipf", duration_s=30.0, base_rate=40.0, zipf_s=1.2,
                      key_universe=200, write_fraction=0.2)
    res = run_experiment(_small(proxies=3, workload=wl, cache=CacheConfig(mode="lease")), 1)
    assert res.counters["cache_hits"] > 0
    assert res.counters["lease_stale_serves"] == 0
    assert not any(c[4] for c in res.completions)


def test_ttl_mode_can_serve_stale():
    # the shadow version oracle has to be able to see staleness at all
    wl = WorkloadSpec(pattern="skewed_zipf", duration_s=60.0, base_rate=40.0, zipf_s=1.2,
                      key_universe=200, write_fraction=0.05)
    res = run_experiment(_small(proxies=3, workload=wl, cache=CacheConfig(mode="ttl")), 1)
    assert res.counters["cache_hits"] > 0
    assert any(c[4] for c in res.completions)


def test_multi_proxy_reroute_cap_holds():
    res = run_experiment(_small(proxies=3), 6)
    assert res.counters["steers"] > 0
    assert reroute_cap_violations(res.decisions, 1_000_000) == []


def test_tampered_margin_is_caught(configs_dir):
    cfg = load_config(configs_dir / "tampered" / "lyapunov_floor.toml")
    cfg = cfg.replace(workload=dataclasses.replace(cfg.workload, duration_s=60.0))
    with pytest.raises(InvariantViolation, match="delta_v"):
        run_experiment(cfg, 1)
    res = run_experiment(cfg.replace(strict_invariants=False), 1)
    assert res.counters["lyapunov_violations"] > 0


def test_same_seed_same_run():
    cfg = _small()
    a, b = run_experiment(cfg, 8), run_experiment(cfg, 8)
    assert a.decisions == b.decisions and a.queue_log == b.queue_log


# ---- step disturbance -----------------------------------------------------

STEP_AT_TICK = 240  # 60 s of calm at warmup load, then a sustained skewed surge


def _step_run(seed):
    cfg = load_config(ROOT / "configs" / "light.toml")
    wl = WorkloadSpec(pattern="bursty", duration_s=180.0, base_rate=24.0, burst_amplitude=1.5,
                      burst_gap_s=60.0, burst_len_s=600.0, zipf_s=0.8, key_universe=100_000,
                      session_mean=16.0)
    return run_experiment(cfg.replace(name="step", workload=wl), seed)


@pytest.mark.parametrize("seed", [1, 2, 3])
def test_knobs_settle_after_step(seed):
    res = _step_run(seed)
    knobs = [(r[5], r[6]) for r in res.control]
    changes = [i for i in range(1, len(knobs)) if knobs[i] != knobs[i - 1]]
    # a fixed point within 30 s of the surge, held to the end
    assert changes and changes[-1] < STEP_AT_TICK + 120
    assert knobs[-1] == (4, 2)


@pytest.mark.xfail(strict=True, reason="B on 8 small EWMA queues is noisy: it exceeds B_tgt + H_up "
                                        "on ~15% of ticks even with no disturbance")
@pytest.mark.parametrize("seed", [1, 2, 3])
def test_pressure_stays_below_escalation_threshold_after_step(seed):
    res = _step_run(seed)
    P = [r[4] for r in res.control]
    last_above = max((i for i, p in enumerate(P) if p > 0.10), default=-1)
    # below the threshold for at least the final 30 s
    assert last_above < len(P) - 120
