"""Command-line entry point.

Exit codes: 0 success, 1 invariant violation or failed check, 2 bad configuration.
Seed precedence: ``--seed`` beats the config file's ``seed`` beats 0.
Runs land under ``--out``, else ``$MIDAS_OUT_ROOT``, else ``./runs``.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import shutil
import sys
from pathlib import Path
from typing import Optional, Sequence

from .config import ConfigError, ExperimentConfig, load_config
from .core import resolve_seed
from .metrics import compare, comparison_table
from .sim.experiment import InvariantViolation, build_requests, run_experiment

log = logging.getLogger("midas")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


class RunDirExists(RuntimeError):
    pass


def out_root(arg: Optional[str]) -> Path:
    return Path(arg or os.environ.get("MIDAS_OUT_ROOT") or "runs")


def prepare_dir(path: Path, force: bool) -> Path:
    if path.exists():
        if not force:
            raise RunDirExists(f"{path} already exists (pass --force to overwrite)")
        shutil.rmtree(path)
    path.mkdir(parents=True)
    return path


def _load(path: str, seed_flag: Optional[int]) -> tuple[ExperimentConfig, int]:
    cfg = load_config(path)
    seed = resolve_seed(seed_flag, cfg.seed)
    return cfg.with_seed(seed), seed


def cmd_run(args: argparse.Namespace) -> int:
    cfg, seed = _load(args.config, args.seed)
    run_dir = prepare_dir(out_root(args.out) / f"{cfg.name}-{cfg.scheduler}-seed{seed}", args.force)
    res = run_experiment(cfg, seed)
    res.write(run_dir)
    s = res.summary
    print(f"{run_dir}: mean queue {s['mean_queue']:.3f}, max {s['max_queue']}, "
          f"dispersion {s['dispersion']:.3f}, p99 {s['p99_ms']} ms")
    return EXIT_OK


def cmd_compare(args: argparse.Namespace) -> int:
    cfg, seed = _load(args.config, args.seed)
    base = out_root(args.out) / f"{cfg.name}-compare-seed{seed}"
    prepare_dir(base, args.force)
    reqs = build_requests(cfg, seed)
    results = {}
    for sched in ("round_robin", "midas"):
        results[sched] = run_experiment(cfg.replace(scheduler=sched), seed, reqs)
        results[sched].write(base / sched)
    rep = compare(results["round_robin"], results["midas"])
    (base / "comparison.json").write_text(json.dumps(rep.as_dict(), indent=2, sort_keys=True) + "\n")
    print(comparison_table([rep]))
    return EXIT_OK


def cmd_reproduce(args: argparse.Namespace) -> int:
    from .suite import SEEDS, reproduce

    root = prepare_dir(out_root(args.out) / "reproduce", args.force)
    seeds = tuple(args.seeds) if args.seeds else SEEDS
    rep = reproduce(args.configs, seeds, args.workers, root if args.keep_runs else None,
                    progress=lambda m: log.info(m))
    lines = [suite_table(rep.outcomes), ""]
    lines += [c.line() for c in rep.criteria]
    text = "\n".join(lines)
    (root / "report.txt").write_text(text + "\n")
    (root / "report.json").write_text(json.dumps({
        "pairs": [o.report | {"lyapunov_violations": o.lyapunov_violations,
                              "cap_violations": o.cap_violations, "wall_s": o.wall_s}
                  for o in rep.outcomes],
        "criteria": [c.__dict__ for c in rep.criteria],
        "wall_s": rep.wall_s,
    }, indent=2, sort_keys=True) + "\n")
    print(text)
    return EXIT_OK if rep.passed else EXIT_FAIL


def suite_table(outcomes) -> str:
    hdr = (f"{'workload':<12}{'seed':>5}{'RR mean':>9}{'MIDAS mean':>11}{'mean red.':>10}"
           f"{'RR max':>8}{'MIDAS max':>10}{'max red.':>9}{'RR disp':>9}{'MIDAS disp':>11}")
    rows = [hdr]
    for o in outcomes:
        d = o.report
        rows.append(f"{o.workload:<12}{o.seed:>5}{d['baseline_mean_queue']:>9.3f}"
                    f"{d['midas_mean_queue']:>11.3f}{d['mean_queue_reduction']:>10.1%}"
                    f"{d['baseline_max_queue']:>8}{d['midas_max_queue']:>10}"
                    f"{d['worst_case_reduction']:>9.1%}{d['baseline_dispersion']:>9.3f}"
                    f"{d['midas_dispersion']:>11.3f}")
    return "\n".join(rows)


def cmd_check_theory(args: argparse.Namespace) -> int:
    from .metrics import balls_into_bins_check
    from .sim.validation import mm1_expected_sojourn_ms, mm1_validation

    mm1_expected_sojourn_ms(args.lam, args.mu)  # raises on an unstable queue before any work
    seed = resolve_seed(args.seed, None)
    ok = True
    lines = []
    M = args.bins
    stats = {d: balls_into_bins_check(M, M, d, args.trials, seed) for d in (1, 2, 3, 4)}
    d1, d2 = stats[1], stats[2]
    checks = [
        ("d=1 median max load in [6, 12]", 6 <= d1.median <= 12, f"{d1.median:g}"),
        ("d=2 median max load <= 5", d2.median <= 5, f"{d2.median:g}"),
        ("d=2 below d=1 on every seed", all(b < a for a, b in zip(d1.max_loads, d2.max_loads)),
         f"{sum(b < a for a, b in zip(d1.max_loads, d2.max_loads))}/{args.trials}"),
        ("median max load non-increasing in d",
         all(stats[d + 1].median <= stats[d].median for d in (1, 2, 3)),
         ", ".join(f"d={d}: {stats[d].median:g}" for d in stats)),
    ]
    if M != 10_000:
        checks = checks[2:]
    r = mm1_validation(args.lam, args.mu, args.arrivals, seed)
    checks.append((f"M/M/1 mean sojourn within 5% of {r.expected_ms:.1f} ms", r.rel_error <= 0.05,
                   f"{r.mean_sojourn_ms:.2f} ms"))
    for name, passed, detail in checks:
        ok &= passed
        lines.append(f"[{'PASS' if passed else 'FAIL'}] {name}: {detail}")
    lines.append("")
    lines.append(f"{'trial':>5}{'d=1':>6}{'d=2':>6}")
    for t, (a, b) in enumerate(zip(d1.max_loads, d2.max_loads)):
        lines.append(f"{t:>5}{a:>6}{b:>6}")
    text = "\n".join(lines)
    if args.out:
        d = prepare_dir(Path(args.out), args.force)
        (d / "check_theory.txt").write_text(text + "\n")
    print(text)
    return EXIT_OK if ok else EXIT_FAIL


def cmd_validate_config(args: argparse.Namespace) -> int:
    status = EXIT_OK
    for path in args.configs:
        try:
            load_config(path)
            print(f"{path}: ok")
        except ConfigError as exc:
            status = EXIT_CONFIG
            for e in exc.errors:
                print(f"{path}: {e}", file=sys.stderr)
    return status


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="midas", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp: argparse.ArgumentParser, config: bool = True) -> None:
        if config:
            sp.add_argument("config")
        sp.add_argument("--out", help="output root (default $MIDAS_OUT_ROOT or ./runs)")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--force", action="store_true", help="overwrite an existing run directory")

    sp = sub.add_parser("run", help="run one experiment")
    common(sp)
    sp.set_defaults(fn=cmd_run)

    sp = sub.add_parser("compare", help="round-robin vs MIDAS on one workload")
    common(sp)
    sp.set_defaults(fn=cmd_compare)

    sp = sub.add_parser("reproduce", help="full workload suite plus every acceptance check")
    sp.add_argument("--out")
    sp.add_argument("--force", action="store_true")
    sp.add_argument("--configs", type=Path, help="directory with the suite configs")
    sp.add_argument("--seeds", type=int, nargs="+")
    sp.add_argument("--workers", type=int, default=min(4, os.cpu_count() or 1))
    sp.add_argument("--keep-runs", action="store_true", help="write every run directory too")
    sp.set_defaults(fn=cmd_reproduce)

    sp = sub.add_parser("check-theory", help="balls-into-bins and M/M/1 checks")
    sp.add_argument("--out")
    sp.add_argument("--force", action="store_true")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--bins", type=int, default=10_000)
    sp.add_argument("--trials", type=int, default=30)
    sp.add_argument("--lam", type=float, default=5.0)
    sp.add_argument("--mu", type=float, default=10.0)
    sp.add_argument("--arrivals", type=int, default=1_000_000)
    sp.set_defaults(fn=cmd_check_theory)

    sp = sub.add_parser("validate-config", help="check config files without running them")
    sp.add_argument("configs", nargs="+")
    sp.set_defaults(fn=cmd_validate_config)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    from .sim.validation import UnstableQueueError

    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except ConfigError as exc:
        for e in exc.errors:
            print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except UnstableQueueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except RunDirExists as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InvariantViolation as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
