"""Best warp error over 25 noisy minimal samples per scene, at several noise levels."""

import numpy as np

from _common import parser, save
from autocalib.evaluation import run_sensitivity_bench


def main():
    p = parser(__doc__, 1000)
    p.add_argument("--sigmas", default="0.1,0.5,1,2")
    p.add_argument("--samples", type=int, default=25)
    args = p.parse_args()
    sigmas = tuple(float(s) for s in args.sigmas.split(","))
    rep = run_sensitivity_bench(sigmas, args.scenes, args.samples, seed=args.seed)
    save(rep, args.out, "sensitivity")
    print(f"{'median warp RMS (px)':20s} " + " ".join(f"{s:>8}" for s in sigmas))
    for s in rep.solvers:
        meds = [np.median(np.where(np.isfinite(v), v, np.inf)) for v in (rep.values(s, "warp_rms", g) for g in sigmas)]
        print(f"{s:20s} " + " ".join(f"{m:8.3f}" for m in meds))


if __name__ == "__main__":
    main()
