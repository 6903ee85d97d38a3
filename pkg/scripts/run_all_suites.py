#!/usr/bin/env python3
"""Run every experiment suite at its default grid and write CSVs to results/.

Usage: python scripts/run_all_suites.py [--seed N] [--out DIR]
The defaults take a few minutes end to end; individual suites can be run
through the CLI instead (`dta suite <name> --out file.csv`).
"""

import argparse
import time
from pathlib import Path

from dta import experiments


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", type=Path, default=Path("results"))
    parser.add_argument("--only", nargs="*", default=None,
                        help="subset of suite names to run")
    args = parser.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)

    names = args.only or experiments.suite_names()
    for name in names:
        start = time.monotonic()
        result = experiments.experiment_suite(name, seed=args.seed)
        path = args.out / f"{name}.csv"
        with open(path, "w") as fh:
            experiments.write_csv(fh, result)
        print(f"{name}: {len(result.rows)} rows -> {path} "
              f"({time.monotonic() - start:.1f}s)")


if __name__ == "__main__":
    main()
