#!/usr/bin/env python3
"""Reshaped apply vs explicit Kronecker matvec over square factor sizes.

Rows go to results/bench_grid.csv; the flop ratio column is exact and machine
independent, the time columns are not.
"""

import argparse
from pathlib import Path

from moka.adapter import PairShape
from moka.bench import ANALYTIC_COLUMNS, TIMING_COLUMNS, run_bench
from moka.cli import write_csv


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--sizes", type=int, nargs="+", default=[4, 8, 16, 32, 64])
    parser.add_argument("--repeats", type=int, default=5)
    parser.add_argument("--out", type=Path, default=Path("results/bench_grid.csv"))
    args = parser.parse_args()

    shapes = []
    for k in args.sizes:
        shapes.append(PairShape(k, k, k, k))
        shapes.append(PairShape(k, k, k, k, identity_a=True))
    rows = run_bench(shapes, args.repeats)
    for row in rows:
        print(f"{row['shape']:>14s}  flop ratio {row['flop_ratio']:8.1f}  time ratio {row['time_ratio']:10.1f}  "
              f"matvec-only {row['time_explicit_matvec_s'] / row['time_reformulated_s']:8.2f}")
    write_csv(args.out, ANALYTIC_COLUMNS + TIMING_COLUMNS, rows)
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
