"""Warp error over a signed grid of relative lambda and f errors on a 3000x2250 camera."""

import argparse

import numpy as np

from autocalib.evaluation import WarpGrid, warp_error
from autocalib.geometry import Calibration


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--grid", type=int, nargs="+", default=[10, 100])
    args = p.parse_args()
    gt = Calibration(-2.4951e-7, 1126.3, (3000, 2250))
    steps = (-0.1, -0.05, 0.0, 0.05, 0.1)
    for N in args.grid:
        g = WarpGrid(3000, 2250, N)
        print(f"N={N}: RMS / mean per-point error (px); rows d_lambda, columns d_f")
        print("        " + "".join(f"{df:>16.2f}" for df in steps))
        for dl in steps:
            cells = []
            for df in steps:
                d, rms = warp_error(gt, Calibration(gt.lam * (1 + dl), gt.f * (1 + df), gt.image_size), g)
                cells.append(f"{rms:7.2f} /{np.nanmean(d):7.2f}")
            print(f"{dl:8.2f}" + "".join(f"{c:>16}" for c in cells))


if __name__ == "__main__":
    main()
