"""Shared argument handling and JSON output for the study scripts."""

import argparse
import json
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np


def parser(description: str, n_reps: int, seed: int) -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(description=description)
    p.add_argument("--reps", type=int, default=n_reps, help="number of replications")
    p.add_argument("--seed", type=int, default=seed, help="base seed")
    p.add_argument("--out", type=Path, help="write the JSON result here instead of stdout")
    p.add_argument("--per-rep", action="store_true", help="include per-replication values")
    return p


def _default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o).__name__)


def emit(args, summary: dict, reps=None) -> None:
    payload = {"summary": summary}
    if args.per_rep and reps is not None:
        payload["replications"] = [asdict(r) for r in reps]
    text = json.dumps(payload, indent=2, sort_keys=True, default=_default)
    if args.out:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        args.out.write_text(text + "\n", encoding="utf-8")
    else:
        sys.stdout.write(text + "\n")
