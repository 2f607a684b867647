"""The reproduction suite: five committed workloads, both schedulers, five seeds,
plus the synthetic and closed-form checks. Shared by the CLI and the tests."""

from __future__ import annotations

import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from statistics import mean
from typing import Callable, Optional, Sequence

from .config import ExperimentConfig, load_config
from .control import ControlDefaults, ControlKnobs, HysteresisState, fast_tick
from .core import Rng, ms_to_us
from .metrics import (balls_into_bins_check, compare, csv_digests, lyapunov_violations,
                      reroute_cap_violations)
from .sim.experiment import build_requests, run_experiment
from .sim.validation import mm1_validation, staleness_experiment

SUITE = ("light", "bursty", "periodic", "diurnal", "skewed_zipf")
SEEDS = (1, 2, 3, 4, 5)
DEFAULT_CONFIGS = Path(__file__).resolve().parents[2] / "configs"


def configs_dir() -> Path:
    return Path(os.environ.get("MIDAS_CONFIGS", DEFAULT_CONFIGS))


@dataclass
class PairOutcome:
    workload: str
    seed: int
    report: dict
    lyapunov_violations: int
    cap_violations: int
    steers: int
    wall_s: float


def run_pair(cfg: ExperimentConfig, seed: int, out_root: Optional[Path] = None) -> PairOutcome:
    """Round-robin and MIDAS on the same arrival stream, audited."""
    t0 = time.perf_counter()
    reqs = build_requests(cfg, seed)
    rr = run_experiment(cfg.replace(scheduler="round_robin"), seed, reqs)
    md = run_experiment(cfg.replace(scheduler="midas"), seed, reqs)
    rep = compare(rr, md)
    window = ms_to_us(cfg.control.W_ms)
    lyap = len(lyapunov_violations(md.decisions))
    cap = len(reroute_cap_violations(md.decisions, window))
    if out_root is not None:
        for res in (rr, md):
            res.write(Path(out_root) / f"{cfg.name}-{res.scheduler}-seed{seed}")
    return PairOutcome(cfg.name, seed, rep.as_dict(), lyap, cap, md.counters["steers"],
                       time.perf_counter() - t0)


def _pair_job(args: tuple) -> PairOutcome:
    path, seed, out_root = args
    return run_pair(load_config(path), seed, out_root)


def run_suite(cfg_dir: Optional[Path] = None, seeds: Sequence[int] = SEEDS,
              workloads: Sequence[str] = SUITE, workers: int = 1,
              out_root: Optional[Path] = None) -> list[PairOutcome]:
    cfg_dir = Path(cfg_dir or configs_dir())
    jobs = [(cfg_dir / f"{w}.toml", s, out_root) for w in workloads for s in seeds]
    if workers <= 1:
        return [_pair_job(j) for j in jobs]
    with ProcessPoolExecutor(workers) as ex:
        return list(ex.map(_pair_job, jobs))


@dataclass(frozen=True)
class Criterion:
    number: int
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.number:>2}. {self.name}: {self.detail}"


def _by(outcomes: Sequence[PairOutcome], workload: str) -> list[PairOutcome]:
    return [o for o in outcomes if o.workload == workload]


def check_mean_reduction(outcomes: Sequence[PairOutcome]) -> Criterion:
    reds = [o.report["mean_queue_reduction"] for o in _by(outcomes, "bursty")]
    slow = max(o.wall_s for o in _by(outcomes, "bursty"))
    ok = bool(reds) and min(reds) >= 0.15 and mean(reds) >= 0.20 and slow < 120
    return Criterion(1, "mean queue reduction (bursty+zipf)", ok,
                     f"per-seed {[round(r, 3) for r in reds]}, mean {mean(reds):.3f} "
                     f"(need each >= 0.15, mean >= 0.20), slowest pair {slow:.1f}s")


def check_worst_case(outcomes: Sequence[PairOutcome]) -> Criterion:
    parts, ok = [], True
    for w in ("bursty", "diurnal"):
        reds = [o.report["worst_case_reduction"] for o in _by(outcomes, w)]
        ok &= bool(reds) and min(reds) >= 0.40
        parts.append(f"{w} min {min(reds):.3f}")
    return Criterion(2, "worst-case hotspot reduction", ok, ", ".join(parts) + " (need >= 0.40)")


def check_dispersion(outcomes: Sequence[PairOutcome]) -> Criterion:
    ok, parts = True, []
    for w in SUITE:
        rows = _by(outcomes, w)
        if not rows:
            ok = False
            continue
        rr = [o.report["baseline_dispersion"] for o in rows]
        md = [o.report["midas_dispersion"] for o in rows]
        ok &= all(m < r for m, r in zip(md, rr)) and max(md) <= 0.50
        if w == "light":
            ok &= max(md) <= 0.05
        parts.append(f"{w} RR {min(rr):.2f}-{max(rr):.2f} MIDAS {min(md):.3f}-{max(md):.3f}")
    return Criterion(3, "dispersion envelope", ok, "; ".join(parts))


def check_lyapunov(outcomes: Sequence[PairOutcome]) -> Criterion:
    bad = sum(o.lyapunov_violations for o in outcomes)
    steers = sum(o.steers for o in outcomes)
    return Criterion(4, "Lyapunov step on every steer", bad == 0 and bool(outcomes),
                     f"{bad} violations over {steers} steers")


def check_reroute_cap(outcomes: Sequence[PairOutcome]) -> Criterion:
    bad = sum(o.cap_violations for o in outcomes)
    return Criterion(5, "reroute cap per 1 s window", bad == 0 and bool(outcomes),
                     f"{bad} violating windows over {len(outcomes)} MIDAS runs")


def hysteresis_trace(P_values: Sequence[float], seed: int = 0,
                     defaults: ControlDefaults = ControlDefaults(),
                     rtt_ms: float = 1.0) -> list[ControlKnobs]:
    rng = Rng(seed).substream("hysteresis")
    knobs, state = ControlKnobs.initial(defaults, rtt_ms), HysteresisState()
    out = []
    for P in P_values:
        knobs, state = fast_tick(state, knobs, P, rng, defaults, rtt_ms)
        out.append(knobs)
    return out


def check_hysteresis(seed: int = 0) -> Criterion:
    rng = Rng(seed).substream("pressure")
    wobble = [rng.uniform(0.0201, 0.0999) for _ in range(10_000)]
    trace = hysteresis_trace(wobble, seed)
    start = ControlKnobs.initial(ControlDefaults(), 1.0)
    changes = sum(1 for a, b in zip([start] + trace, trace) if (a.d, a.delta_L) != (b.d, b.delta_L))
    step = hysteresis_trace([0.2] * 10, seed)
    first = next((i + 1 for i, k in enumerate(step) if k.d != start.d), None)
    ok = changes == 0 and first == 3
    return Criterion(6, "hysteresis no-chatter", ok,
                     f"{changes} knob changes in 10^4 in-band ticks; step escalates at tick {first}")


def check_mm1(seed: int = 0, arrivals: int = 1_000_000) -> Criterion:
    r = mm1_validation(5.0, 10.0, arrivals, seed)
    return Criterion(7, "M/M/1 mean sojourn", r.rel_error <= 0.05,
                     f"{r.mean_sojourn_ms:.2f} ms vs {r.expected_ms:.0f} ms "
                     f"({r.rel_error:.2%} off, {r.arrivals} arrivals)")


def check_power_of_d(seed: int = 0, trials: int = 30) -> Criterion:
    one = balls_into_bins_check(10_000, 10_000, 1, trials, seed)
    two = balls_into_bins_check(10_000, 10_000, 2, trials, seed)
    pairwise = all(b < a for a, b in zip(one.max_loads, two.max_loads))
    ok = two.median <= 5 and pairwise
    return Criterion(8, "power-of-d max load", ok,
                     f"d=2 median {two.median:g} (need <= 5), d=1 median {one.median:g}, "
                     f"d=2 below d=1 on {sum(b < a for a, b in zip(one.max_loads, two.max_loads))}"
                     f"/{trials} seeds")


def check_staleness(seed: int = 0, lookups: int = 1_000_000) -> Criterion:
    ttl = staleness_experiment("ttl", lookups=lookups, seed=seed)
    lease = staleness_experiment("lease", lookups=lookups, seed=seed)
    ok = ttl.stale_fraction <= 2e-4 and lease.stale == 0
    return Criterion(9, "cache staleness", ok,
                     f"TTL mode {ttl.stale}/{ttl.lookups} stale ({ttl.stale_fraction:.1e}, "
                     f"need <= 2e-4, {ttl.invalidations} invalidations); lease mode {lease.stale} stale")


def check_determinism(cfg_dir: Optional[Path] = None, workloads: Sequence[str] = SUITE,
                      seed: int = 1) -> Criterion:
    cfg_dir = Path(cfg_dir or configs_dir())
    mismatched = []
    for w in workloads:
        cfg = load_config(cfg_dir / f"{w}.toml")
        for sched in ("round_robin", "midas"):
            c = cfg.replace(scheduler=sched)
            a = csv_digests(run_experiment(c, seed))
            b = csv_digests(run_experiment(c, seed))
            if a != b:
                mismatched.append(f"{w}/{sched}")
    return Criterion(10, "determinism", not mismatched,
                     f"{len(workloads) * 2} configs run twice at seed {seed}; "
                     f"mismatches: {mismatched or 'none'}")


@dataclass
class SuiteReport:
    outcomes: list[PairOutcome]
    criteria: list[Criterion] = field(default_factory=list)
    wall_s: float = 0.0

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.criteria)


def reproduce(cfg_dir: Optional[Path] = None, seeds: Sequence[int] = SEEDS, workers: int = 1,
              out_root: Optional[Path] = None, determinism_workloads: Sequence[str] = ("bursty",),
              progress: Optional[Callable[[str], None]] = None) -> SuiteReport:
    """Everything the reproduction command asserts, timed end to end."""
    t0 = time.perf_counter()
    say = progress or (lambda _msg: None)
    say("running workload suite")
    outcomes = run_suite(cfg_dir, seeds, SUITE, workers, out_root)
    crits = [check_mean_reduction(outcomes), check_worst_case(outcomes),
             check_dispersion(outcomes), check_lyapunov(outcomes), check_reroute_cap(outcomes)]
    for fn in (check_hysteresis, check_mm1, check_power_of_d, check_staleness):
        say(f"running {fn.__name__[6:]}")
        crits.append(fn())
    say("running determinism")
    crits.append(check_determinism(cfg_dir, determinism_workloads))
    wall = time.perf_counter() - t0
    crits.append(Criterion(11, "reproduction wall time", wall < 600 and all(c.passed for c in crits),
                           f"{wall:.0f}s (need < 600s and every criterion passing)"))
    return SuiteReport(outcomes, crits, wall)
