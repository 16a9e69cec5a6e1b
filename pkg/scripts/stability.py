"""Noiseless single-shot minimal solves: exactness rates and log10 warp-error quantiles per solver path."""

import numpy as np

from _common import parser, save
from autocalib.evaluation import run_stability_bench


def main():
    args = parser(__doc__, 1000).parse_args()
    rep = run_stability_bench(args.scenes, seed=args.seed)
    save(rep, args.out, "stability")
    for s in rep.solvers:
        el, ef, lw = (rep.values(s, m) for m in ("lam_rel_err", "f_rel_err", "log10_warp_rms"))
        exact = np.mean((el < 1e-6) & (ef < 1e-6))
        print(f"{s:20s} exact {100 * exact:6.2f}%  log10 warp < -6 {100 * np.mean(lw < -6):6.2f}%  median {np.nanmedian(lw):7.2f}")


if __name__ == "__main__":
    main()
