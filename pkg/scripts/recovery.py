"""Full robust pipeline on scenes with outliers: relative errors of lambda and f, and the local-optimization score check."""

import numpy as np

from _common import parser, save
from autocalib.evaluation import run_recovery_bench


def main():
    p = parser(__doc__, 100)
    p.add_argument("--outliers", type=float, default=0.3)
    p.add_argument("--sigma", type=float, default=0.5)
    args = p.parse_args()
    rep = run_recovery_bench(args.scenes, args.outliers, args.sigma, seed=args.seed)
    save(rep, args.out, "recovery")
    el, ef = rep.values("ensemble", "lam_rel_err_pct"), rep.values("ensemble", "f_rel_err_pct")
    kept = rep.values("ensemble", "lo_score_kept")
    print(f"median rel err lambda {np.nanmedian(el):.3f}%  f {np.nanmedian(ef):.3f}%  failures {int(np.isnan(el).sum())}")
    print(f"local optimization kept the score in {int(kept.sum())}/{len(kept)} scenes")


if __name__ == "__main__":
    main()
