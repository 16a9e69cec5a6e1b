"""Median warp error of 6CA, 2PC+4CA and their ensemble on a mixed line-rich / repeat-rich corpus."""

import numpy as np

from _common import parser, save
from autocalib.evaluation import run_ensemble_bench


def main():
    p = parser(__doc__, 200)
    p.add_argument("--sigma", type=float, default=1.0)
    args = p.parse_args()
    rep = run_ensemble_bench(n_scenes=args.scenes, seed=args.seed, sigma=args.sigma)
    save(rep, args.out, "ensemble")
    for s in rep.solvers:
        v = rep.values(s, "warp_rms")
        print(
            f"{s:14s} median {np.median(v):8.3f}  line-rich {np.median(v[0::2]):8.3f}  "
            f"repeat-rich {np.median(v[1::2]):8.3f}  failures {int(np.isinf(v).sum())}"
        )


if __name__ == "__main__":
    main()
