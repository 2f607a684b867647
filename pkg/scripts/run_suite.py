#!/usr/bin/env python3
"""Run the round-robin vs MIDAS suite and print one comparison row per pair.

    python scripts/run_suite.py --seeds 1 2 3 --workloads bursty diurnal --workers 2
"""

import argparse
import os
from pathlib import Path

from midas.cli import suite_table
from midas.suite import SEEDS, SUITE, configs_dir, run_suite


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--configs", type=Path, default=configs_dir())
    p.add_argument("--seeds", type=int, nargs="+", default=list(SEEDS))
    p.add_argument("--workloads", nargs="+", default=list(SUITE), choices=SUITE)
    p.add_argument("--workers", type=int, default=os.cpu_count() or 1)
    p.add_argument("--out", type=Path, help="also write every run directory here")
    args = p.parse_args()
    outcomes = run_suite(args.configs, args.seeds, args.workloads, args.workers, args.out)
    print(suite_table(outcomes))
    print(f"\nLyapunov violations: {sum(o.lyapunov_violations for o in outcomes)}, "
          f"cap violations: {sum(o.cap_violations for o in outcomes)}, "
          f"steers: {sum(o.steers for o in outcomes)}")


if __name__ == "__main__":
    main()
