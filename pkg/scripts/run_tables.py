#!/usr/bin/env python3
"""Reproduce the simulation tables at desk scale.

Example:
    python scripts/run_tables.py --reps 200 --parallelism 2 --out-dir results/
"""

import argparse
import time
from pathlib import Path

from ppcf.harness import run_table


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--reps", type=int, default=200)
    ap.add_argument("--parallelism", type=int, default=2)
    ap.add_argument("--seed", type=int, default=2024)
    ap.add_argument("--tables", type=int, nargs="+", default=[2, 3, 4])
    ap.add_argument("--out-dir", type=str, default="results")
    args = ap.parse_args()

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for table_id in args.tables:
        out = out_dir / f"table{table_id}.csv"
        t0 = time.time()
        rows = run_table(table_id, reps=args.reps, parallelism=args.parallelism,
                         out_path=out, base_seed=args.seed)
        print(f"table {table_id}: {len(rows)} rows -> {out} "
              f"({time.time() - t0:.0f} s)")
        for row in rows:
            print("   ", {k: (round(v, 4) if isinstance(v, float) else v)
                          for k, v in row.items()})


if __name__ == "__main__":
    main()
