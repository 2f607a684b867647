#!/usr/bin/env python3
"""Seed robustness: rerun one workload over many seeds and summarise the spread
of mean-queue reduction, worst-case reduction and MIDAS dispersion."""

import argparse
import os
from pathlib import Path
from statistics import mean, pstdev

from midas.suite import SUITE, configs_dir, run_suite


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("workload", choices=SUITE)
    p.add_argument("--first", type=int, default=1)
    p.add_argument("--count", type=int, default=20)
    p.add_argument("--configs", type=Path, default=configs_dir())
    p.add_argument("--workers", type=int, default=os.cpu_count() or 1)
    args = p.parse_args()
    seeds = range(args.first, args.first + args.count)
    outcomes = run_suite(args.configs, seeds, [args.workload], args.workers)
    for key in ("mean_queue_reduction", "worst_case_reduction", "baseline_dispersion",
                "midas_dispersion"):
        vals = [o.report[key] for o in outcomes]
        print(f"{key:<22} mean {mean(vals):7.3f}  sd {pstdev(vals):6.3f}  "
              f"min {min(vals):7.3f}  max {max(vals):7.3f}")


if __name__ == "__main__":
    main()
