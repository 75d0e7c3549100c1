"""Estimated random-effect SD against a known SD."""

import numpy as np
from _common import emit, parser

from smoothrem import studies


def main():
    p = parser(__doc__, n_reps=20, seed=77)
    p.add_argument("--levels", type=int, default=120)
    p.add_argument("--sigma", type=float, default=1.0)
    args = p.parse_args()
    reps = studies.re_sd_study(n_levels=args.levels, sigma=args.sigma, n_reps=args.reps,
                               base_seed=args.seed)
    sd = np.array([r.values["sd"] for r in reps])
    emit(args, {"n_reps": len(reps), "sigma": args.sigma, "median_sd": float(np.median(sd)),
                "mean_sd": float(sd.mean()),
                "median_realized_sd": float(np.median([r.values["true_sd"] for r in reps])),
                "relative_error": float(abs(np.median(sd) - args.sigma) / args.sigma)}, reps)


if __name__ == "__main__":
    main()
