"""Disk convergence study for k = 1..5, printed as one table per degree.

    python3 scripts/run_convergence.py [--levels-low 4] [--levels-high 3] [--out out/study]
"""

import argparse
import csv
import logging
from pathlib import Path

from isocut.analysis import StudyConfig, register_disk_case, run_convergence


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--levels-low", type=int, default=4, help="levels for k = 1..3")
    ap.add_argument("--levels-high", type=int, default=3, help="levels for k = 4, 5")
    ap.add_argument("--lambda-scale", type=float, default=20.0)
    ap.add_argument("--out", type=Path, default=None, help="directory for one csv per degree")
    args = ap.parse_args()
    logging.basicConfig(level=logging.ERROR)

    case = register_disk_case()
    cfg = StudyConfig(lambda_scale=args.lambda_scale)
    for k in range(1, 6):
        rep = run_convergence(case, k, args.levels_low if k <= 3 else args.levels_high, cfg)
        print(rep.table(), end="\n\n")
        if args.out:
            args.out.mkdir(parents=True, exist_ok=True)
            recs = rep.records()
            with open(args.out / f"disk_k{k}.csv", "w", newline="") as fh:
                w = csv.DictWriter(fh, fieldnames=list(recs[0]) if recs else ["level"])
                w.writeheader()
                w.writerows(recs)


if __name__ == "__main__":
    main()
