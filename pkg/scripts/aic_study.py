"""How often the corrected AIC prefers the data-generating model over a reduced one."""

import numpy as np
from _common import emit, parser

from smoothrem import studies


def main():
    p = parser(__doc__, n_reps=50, seed=51)
    p.add_argument("--drop", default="distance", help="term removed from the reduced model")
    args = p.parse_args()
    reps = studies.aic_selection_study(n_reps=args.reps, base_seed=args.seed, drop=args.drop)
    emit(args, {"n_reps": len(reps), "drop": args.drop,
                "share_true_model": float(np.mean([r.values["picks_true"] for r in reps]))}, reps)


if __name__ == "__main__":
    main()
