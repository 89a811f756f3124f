"""Geometry errors of the isoparametric mapping on the disk, with fitted slopes."""

import argparse
import logging

from isocut.analysis import fitted_slope, geometry_study, register_disk_case
from isocut.isomap import GRAD, PROJECTED


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--levels", type=int, default=4)
    ap.add_argument("--kmax", type=int, default=3)
    ap.add_argument("--ghat", choices=[GRAD, PROJECTED], default=GRAD)
    args = ap.parse_args()
    logging.basicConfig(level=logging.ERROR)

    case = register_disk_case()
    print(f"{'k':>2} {'L':>2} {'h':>8} {'geom_if':>11} {'geom_bnd':>11} {'det_min':>8} {'det_max':>8}")
    for k in range(1, args.kmax + 1):
        rows = geometry_study(case, k, args.levels, args.ghat)
        for r in rows:
            print(f"{k:>2} {r.level:>2} {r.h:8.4f} {r.geom_if:11.3e} {r.geom_bnd:11.3e} {r.det_min:8.4f} {r.det_max:8.4f}")
        h = [r.h for r in rows]
        if len(rows) > 1:
            print(
                f"   slopes: interface {fitted_slope(h, [r.geom_if for r in rows]):.2f}"
                f"  boundary {fitted_slope(h, [r.geom_bnd for r in rows]):.2f}"
            )


if __name__ == "__main__":
    main()
