"""Evaluation quantities over completed runs: queue statistics, dispersion,
latency percentiles, run comparison, invariant audits and the balls-into-bins
check. Also owns the CSV/JSON layout of a run directory."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Optional, Sequence

import numpy as np

from .core import US_PER_MS, fmt_ms
from .telemetry import quantile

CSV_VERSION = "v1"


def _parse_ms(s: str) -> int:
    """Inverse of ``fmt_ms``: exact integer microseconds."""
    neg = s.startswith("-")
    whole, _, frac = s.lstrip("-").partition(".")
    us = int(whole) * US_PER_MS + int((frac + "000")[:3])
    return -us if neg else us


@dataclass
class RunResult:
    name: str
    scheduler: str
    seed: int
    m: int
    duration_us: int
    arrivals: list = field(default_factory=list)      # (id, t_us, path, op, is_write, session, seq, bound)
    queue_log: list = field(default_factory=list)     # (t_us, server, queue_len)
    completions: list = field(default_factory=list)   # (id, t_us, latency_us, server or -1, stale)
    decisions: list = field(default_factory=list)     # see DECISION_COLUMNS
    control: list = field(default_factory=list)
    telemetry: list = field(default_factory=list)
    cache: list = field(default_factory=list)
    targets: Optional[dict] = None
    counters: dict = field(default_factory=dict)
    config: Optional[dict] = None
    _summary: Optional[dict] = field(default=None, repr=False)

    @property
    def summary(self) -> dict:
        if self._summary is None:
            self._summary = summarize(self)
        return self._summary

    def arrival_hash(self) -> str:
        return hashlib.sha256(_csv_text("arrivals", ARRIVAL_COLUMNS,
                                        (_arrival_row(a) for a in self.arrivals)).encode()).hexdigest()

    def per_server_time_avg(self) -> list[float]:
        return time_averages(self.queue_log, self.m, self.duration_us)

    def write(self, out_dir: Path) -> None:
        write_run(self, out_dir)


ARRIVAL_COLUMNS = ("request_id", "time_ms", "path", "op", "is_write", "session", "session_seq",
                   "owner_bound")
QUEUE_COLUMNS = ("time_ms", "server", "queue_len")
COMPLETION_COLUMNS = ("request_id", "time_ms", "latency_ms", "server", "stale")
DECISION_COLUMNS = ("time_ms", "request_id", "proxy", "key", "primary", "chosen", "eligible",
                    "steered", "pinned", "constrained", "d", "delta_L", "delta_t_ms", "f_max",
                    "L_primary", "L_chosen", "snapshot_ms")
CONTROL_COLUMNS = ("time_ms", "proxy", "B", "p99_global_ms", "P", "d", "delta_L", "delta_t_ms",
                   "f_max", "steer_count_in_window", "eligible_count_in_window")
TELEMETRY_COLUMNS = ("time_ms", "server", "raw_queue", "ewma_queue", "p50_ms", "p99_ms")
CACHE_COLUMNS = ("time_ms", "proxy", "class_id", "hazard_per_ms", "write_fraction", "ttl_ms",
                 "hit_ratio", "stale_serve_count")


def _fmt(v: Any) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _arrival_row(a: tuple) -> list:
    rid, t_us, path, op, is_write, session, seq, bound = a
    return [rid, fmt_ms(t_us), path, op, is_write, session, seq, bound]


def _csv_text(name: str, columns: Sequence[str], rows: Iterable[Sequence[Any]]) -> str:
    buf = io.StringIO()
    buf.write(f"# midas-csv {CSV_VERSION} {name}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue()


def _rows_for(result: RunResult) -> dict[str, tuple[Sequence[str], Iterable]]:
    return {
        "arrivals": (ARRIVAL_COLUMNS, (_arrival_row(a) for a in result.arrivals)),
        "queues": (QUEUE_COLUMNS, ((fmt_ms(t), s, q) for t, s, q in result.queue_log)),
        "completions": (COMPLETION_COLUMNS, ((rid, fmt_ms(t), fmt_ms(lat), srv, stale)
                                             for rid, t, lat, srv, stale in result.completions)),
        "decisions": (DECISION_COLUMNS, ((fmt_ms(r[0]),) + tuple(r[1:16]) + (fmt_ms(r[16]),)
                                         for r in result.decisions)),
        "control": (CONTROL_COLUMNS, ((fmt_ms(r[0]),) + tuple(r[1:]) for r in result.control)),
        "telemetry": (TELEMETRY_COLUMNS, ((fmt_ms(r[0]),) + tuple(r[1:]) for r in result.telemetry)),
        "cache": (CACHE_COLUMNS, ((fmt_ms(r[0]),) + tuple(r[1:]) for r in result.cache)),
    }


def csv_digests(result: RunResult) -> dict[str, str]:
    """sha256 of every CSV exactly as ``write_run`` would write it."""
    return {name: hashlib.sha256(_csv_text(name, cols, rows).encode()).hexdigest()
            for name, (cols, rows) in _rows_for(result).items()}


def write_run(result: RunResult, out_dir: Path) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, (cols, rows) in _rows_for(result).items():
        (out_dir / f"{name}.csv").write_text(_csv_text(name, cols, rows))
    summary = dict(result.summary)
    summary.update(name=result.name, scheduler=result.scheduler, seed=result.seed, m=result.m,
                   duration_us=result.duration_us, targets=result.targets,
                   counters=result.counters, arrival_hash=result.arrival_hash())
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    if result.config is not None:
        (out_dir / "config.json").write_text(json.dumps(result.config, indent=2, sort_keys=True) + "\n")


class CsvVersionError(ValueError):
    pass


def read_csv(path: Path) -> list[dict[str, str]]:
    text = Path(path).read_text()
    first, _, rest = text.partition("\n")
    parts = first.split()
    if len(parts) < 3 or parts[:2] != ["#", "midas-csv"] or parts[2] != CSV_VERSION:
        raise CsvVersionError(f"{path}: expected '# midas-csv {CSV_VERSION}' header, got {first!r}")
    return list(csv.DictReader(io.StringIO(rest)))


def time_averages(queue_log: Sequence[tuple[int, int, int]], m: int, duration_us: int) -> list[float]:
    """Exact per-server time average of a piecewise-constant queue trace over [0, duration)."""
    area = [0] * m
    last_t = [0] * m
    last_q = [0] * m
    for t, s, q in queue_log:
        t = min(t, duration_us)
        area[s] += last_q[s] * (t - last_t[s])
        last_t[s], last_q[s] = t, q
    for s in range(m):
        area[s] += last_q[s] * (duration_us - last_t[s])
    return [a / duration_us for a in area]


def coefficient_of_variation(values: Sequence[float]) -> float:
    if not values:
        return 0.0
    mean = sum(values) / len(values)
    if mean == 0:
        return 0.0
    var = sum((v - mean) ** 2 for v in values) / len(values)
    return math.sqrt(var) / mean


def dispersion(result: RunResult) -> float:
    return coefficient_of_variation(result.per_server_time_avg())


def instantaneous_cv(result: RunResult, step_us: int) -> list[tuple[int, float]]:
    """CV across servers sampled every ``step_us``; exported for plots only."""
    cur = [0] * result.m
    out = []
    it = iter(result.queue_log)
    nxt = next(it, None)
    for t in range(0, result.duration_us, step_us):
        while nxt is not None and nxt[0] <= t:
            cur[nxt[1]] = nxt[2]
            nxt = next(it, None)
        out.append((t, coefficient_of_variation(cur)))
    return out


def summarize(result: RunResult) -> dict:
    avgs = result.per_server_time_avg()
    lat_ms = [c[2] / US_PER_MS for c in result.completions]
    steered = sum(1 for d in result.decisions if d[7])
    n_dec = len(result.decisions)
    hits = sum(1 for c in result.completions if c[3] == -1)
    lookups = result.counters.get("cacheable_lookups", 0)
    return {
        "mean_queue": sum(avgs) / len(avgs),
        "max_queue": max((q for _, _, q in result.queue_log), default=0),
        "dispersion": coefficient_of_variation(avgs),
        "per_server_mean_queue": avgs,
        "p50_ms": quantile(lat_ms, 0.5) if lat_ms else None,
        "p99_ms": quantile(lat_ms, 0.99) if lat_ms else None,
        "steer_fraction": steered / n_dec if n_dec else 0.0,
        "steers": steered,
        "hit_ratio": hits / lookups if lookups else 0.0,
        "stale_serves": sum(1 for c in result.completions if c[4]),
        "arrivals": len(result.arrivals),
        "completions": len(result.completions),
    }


def summary_from_dir(run_dir: Path) -> dict:
    """Recompute the headline statistics from the CSV files alone."""
    run_dir = Path(run_dir)
    meta = json.loads((run_dir / "summary.json").read_text())
    m = meta["m"]
    duration_us = meta["duration_us"]
    qlog = [(_parse_ms(r["time_ms"]), int(r["server"]), int(r["queue_len"]))
            for r in read_csv(run_dir / "queues.csv")]
    comps = read_csv(run_dir / "completions.csv")
    decs = read_csv(run_dir / "decisions.csv")
    avgs = time_averages(qlog, m, duration_us)
    lat_ms = [_parse_ms(r["latency_ms"]) / US_PER_MS for r in comps]
    steered = sum(1 for r in decs if r["steered"] == "1")
    hits = sum(1 for r in comps if r["server"] == "-1")
    lookups = meta["counters"].get("cacheable_lookups", 0)
    return {
        "mean_queue": sum(avgs) / len(avgs),
        "max_queue": max((q for _, _, q in qlog), default=0),
        "dispersion": coefficient_of_variation(avgs),
        "per_server_mean_queue": avgs,
        "p50_ms": quantile(lat_ms, 0.5) if lat_ms else None,
        "p99_ms": quantile(lat_ms, 0.99) if lat_ms else None,
        "steer_fraction": steered / len(decs) if decs else 0.0,
        "steers": steered,
        "hit_ratio": hits / lookups if lookups else 0.0,
        "stale_serves": sum(1 for r in comps if r["stale"] == "1"),
        "arrivals": len(read_csv(run_dir / "arrivals.csv")),
        "completions": len(comps),
    }


class ComparisonError(ValueError):
    pass


@dataclass(frozen=True)
class ComparisonReport:
    baseline: RunResult
    midas: RunResult
    mean_queue_reduction: float
    worst_case_reduction: float
    dispersion_pair: tuple[float, float]

    def as_dict(self) -> dict:
        b, m = self.baseline.summary, self.midas.summary
        return {
            "workload": self.midas.name,
            "seed": self.midas.seed,
            "baseline_mean_queue": b["mean_queue"],
            "midas_mean_queue": m["mean_queue"],
            "baseline_max_queue": b["max_queue"],
            "midas_max_queue": m["max_queue"],
            "mean_queue_reduction": self.mean_queue_reduction,
            "worst_case_reduction": self.worst_case_reduction,
            "baseline_dispersion": self.dispersion_pair[0],
            "midas_dispersion": self.dispersion_pair[1],
            "midas_steers": m["steers"],
            "midas_hit_ratio": m["hit_ratio"],
            "arrival_hash": self.midas.arrival_hash(),
        }


def _reduction(base: float, new: float) -> float:
    if base == 0:
        return 0.0
    return 1.0 - new / base


def compare(baseline: RunResult, midas: RunResult) -> ComparisonReport:
    if baseline.arrival_hash() != midas.arrival_hash():
        raise ComparisonError("runs used different arrival streams; comparison is invalid")
    b, m = baseline.summary, midas.summary
    return ComparisonReport(
        baseline, midas,
        mean_queue_reduction=_reduction(b["mean_queue"], m["mean_queue"]),
        worst_case_reduction=_reduction(b["max_queue"], m["max_queue"]),
        dispersion_pair=(b["dispersion"], m["dispersion"]),
    )


def comparison_table(reports: Sequence[ComparisonReport]) -> str:
    lines = [
        f"{'workload':<14}{'seed':>6}{'RR mean':>10}{'MIDAS mean':>12}{'mean red.':>11}"
        f"{'RR max':>8}{'MIDAS max':>11}{'max red.':>10}{'RR disp':>9}{'MIDAS disp':>12}",
    ]
    for r in reports:
        d = r.as_dict()
        lines.append(
            f"{d['workload']:<14}{d['seed']:>6}{d['baseline_mean_queue']:>10.3f}"
            f"{d['midas_mean_queue']:>12.3f}{d['mean_queue_reduction']:>10.1%} "
            f"{d['baseline_max_queue']:>8}{d['midas_max_queue']:>11}{d['worst_case_reduction']:>9.1%} "
            f"{d['baseline_dispersion']:>9.3f}{d['midas_dispersion']:>12.3f}"
        )
    return "\n".join(lines)


# ---- invariant audits over decision logs ---------------------------------

def lyapunov_violations(decisions: Iterable[tuple]) -> list[tuple]:
    """Steered decisions whose recorded snapshot loads give a potential change above -2."""
    from .control import delta_v

    bad = []
    for d in decisions:
        if d[7] and delta_v(d[14], d[15], 1) > -2:
            bad.append(d)
    return bad


def reroute_cap_violations(decisions: Sequence[tuple], window_us: int) -> list[tuple[int, int]]:
    """Windows of length ``window_us`` in which steered > sum(f_max over eligible) + 1.

    Works per proxy over the subsequence of eligible decisions. For each start
    index i the worst end j inside the window maximises a prefix-sum difference,
    found with a monotone deque. Returns (proxy, start_time_us) per violation.
    """
    by_proxy: dict[int, list[tuple]] = {}
    for d in decisions:
        if d[6]:
            by_proxy.setdefault(d[2], []).append(d)
    out = []
    for proxy, evs in sorted(by_proxy.items()):
        n = len(evs)
        g = [0.0] * (n + 1)
        for k, d in enumerate(evs):
            g[k + 1] = g[k] + (1.0 if d[7] else 0.0) - d[13]
        dq: deque[int] = deque()
        j = 0
        for i in range(n):
            while j < n and evs[j][0] - evs[i][0] < window_us:
                while dq and g[dq[-1]] <= g[j + 1]:
                    dq.pop()
                dq.append(j + 1)
                j += 1
            while dq and dq[0] <= i:
                dq.popleft()
            if dq and g[dq[0]] - g[i] > 1.0 + 1e-9:
                out.append((proxy, evs[i][0]))
    return out


# ---- balls into bins ----------------------------------------------------

@dataclass(frozen=True)
class BallsIntoBinsStats:
    M: int
    n: int
    d: int
    max_loads: tuple[int, ...]

    @property
    def median(self) -> float:
        return float(np.median(self.max_loads))


def balls_into_bins_max_load(M: int, n: int, d: int, rng: np.random.Generator) -> int:
    if M < 1 or n < 0 or d < 1:
        raise ValueError("need M >= 1, n >= 0, d >= 1")
    if d == 1:
        return int(np.bincount(rng.integers(0, M, size=n), minlength=M).max()) if n else 0
    loads = [0] * M
    choices = rng.integers(0, M, size=(n, d)).tolist()
    for row in choices:
        best = row[0]
        lb = loads[best]
        for c in row[1:]:
            if loads[c] < lb:
                best, lb = c, loads[c]
        loads[best] = lb + 1
    return max(loads) if n else 0


def balls_into_bins_check(M: int, n: int, d: int, trials: int, seed: int = 0) -> BallsIntoBinsStats:
    """Per-trial maximum bin load; trial t uses seed sequence (seed, t)."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    loads = tuple(
        balls_into_bins_max_load(M, n, d, np.random.default_rng([seed, t, d]))
        for t in range(trials)
    )
    return BallsIntoBinsStats(M, n, d, loads)
