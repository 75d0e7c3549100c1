"""Fit time against the number of sampled events."""

import argparse
import json

from smoothrem import studies


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--sizes", type=int, nargs="+", default=[2000, 4000, 8000])
    p.add_argument("--levels", type=int, default=49)
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--full", type=int, default=13094, help="also time one fit of this size")
    args = p.parse_args()
    result = studies.scaling_slope(tuple(args.sizes), args.levels, args.repeats)
    if args.full:
        result["full_size"] = args.full
        result["full_seconds"] = studies.time_fit(args.full, args.levels, repeats=1)
    print(json.dumps(result, indent=2, sort_keys=True))


if __name__ == "__main__":
    main()
