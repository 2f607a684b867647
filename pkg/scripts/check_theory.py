#!/usr/bin/env python3
"""Balls-into-bins max load for d = 1..4 over a range of bin counts, next to the
ln ln M / ln d growth term, plus the M/M/1 sojourn check at a few utilisations."""

import argparse
import math

from midas.metrics import balls_into_bins_check
from midas.sim.validation import mm1_validation


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--trials", type=int, default=10)
    p.add_argument("--arrivals", type=int, default=200_000)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()

    print(f"{'M':>7}" + "".join(f"{'d=' + str(d):>8}{'lnln/ln':>9}" for d in (2, 3, 4)) + f"{'d=1':>8}")
    for M in (100, 1_000, 10_000, 100_000):
        row = f"{M:>7}"
        for d in (2, 3, 4):
            med = balls_into_bins_check(M, M, d, args.trials, args.seed).median
            row += f"{med:>8g}{math.log(math.log(M)) / math.log(d):>9.2f}"
        row += f"{balls_into_bins_check(M, M, 1, args.trials, args.seed).median:>8g}"
        print(row)

    print(f"\n{'rho':>5}{'sim ms':>10}{'1/(mu-lam)':>12}{'error':>8}")
    for lam in (2.0, 5.0, 8.0):
        r = mm1_validation(lam, 10.0, args.arrivals, args.seed)
        print(f"{lam / 10:>5.1f}{r.mean_sojourn_ms:>10.1f}{r.expected_ms:>12.1f}{r.rel_error:>8.1%}")


if __name__ == "__main__":
    main()
