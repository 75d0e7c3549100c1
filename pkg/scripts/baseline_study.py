"""Cumulative baseline recovery: shape against a growing truth, slope against a constant one."""

import numpy as np
from _common import emit, parser

from smoothrem import studies


def main():
    p = parser(__doc__, n_reps=50, seed=31)
    p.add_argument("--hazard", type=float, default=0.02, help="constant hazard of the slope study")
    p.add_argument("--slope-seed", type=int, default=32)
    args = p.parse_args()
    shape = studies.baseline_shape_study(n_reps=args.reps, base_seed=args.seed)
    slope = studies.baseline_slope_study(hazard=args.hazard, n_reps=args.reps,
                                         base_seed=args.slope_seed)
    r = np.array([x.values["pearson"] for x in shape])
    s = np.array([x.values["slope"] for x in slope])
    emit(args, {
        "n_reps": args.reps,
        "pearson_median": float(np.nanmedian(r)),
        "pearson_min": float(np.nanmin(r)),
        "share_pearson_ge_0.95": float(np.mean(r >= 0.95)),
        "hazard": args.hazard,
        "mean_slope": float(s.mean()),
        "slope_ratio": float(s.mean() / args.hazard),
    }, shape + slope)


if __name__ == "__main__":
    main()
