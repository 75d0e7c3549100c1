"""Command-line front end: simulate, sample, fit, baseline, gof, report.

Every command rebuilds its inputs deterministically from the config and
the root seed, so commands can run as independent processes.  Each writes a
``<command>_manifest.json`` next to its outputs.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .baseline import breslow_matched, breslow_pooled, write_baseline_csv
from .config import ConfigError, RunConfig, load_config, validate
from .covariates import (CovariateEngine, CovariateTables, read_attribute_csv, read_distance_csv,
                         read_group_csv, read_pair_csv)
from .events import load_network, write_events_csv
from .fit import evaluate_tv_effect, fit_smooth_rem
from .gof import gof_report
from .sampling import build_case_control_dataset
from .simulator import StudyConfig, replication_seeds, simulate_sequence

log = logging.getLogger("smoothrem")

COMMANDS = ("simulate", "sample", "fit", "baseline", "gof", "report")


class CommandError(RuntimeError):
    def __init__(self, command: str, exc: BaseException):
        self.command = command
        self.cause = exc
        super().__init__(f"{command}: {type(exc).__name__}: {exc}")


# ---------------------------------------------------------------------------
# seeds and manifests
# ---------------------------------------------------------------------------


def derived_seed(root: int, stream: str) -> int:
    """Independent integer seed for a named stream of the root seed."""
    tag = int.from_bytes(hashlib.sha256(stream.encode()).digest()[:4], "little")
    return int(np.random.SeedSequence([int(root), tag]).generate_state(1)[0])


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(cfg: RunConfig, command: str, out_dir: Path, outputs) -> Path:
    inputs = {}
    for where, p in [("events", cfg.paths.events), ("native", cfg.paths.native),
                     ("strata", cfg.paths.strata), ("actors", cfg.paths.actors),
                     *cfg.paths.tables.all_paths()]:
        if p is not None:
            inputs[where] = file_sha256(cfg.resolve(p))
    manifest = {
        "tool": "smoothrem",
        "version": __version__,
        "command": command,
        "config_hash": cfg.config_hash(),
        "seed": cfg.seed,
        "inputs": inputs,
        "outputs": {Path(p).name: file_sha256(p) for p in outputs},
    }
    path = out_dir / f"{command}_manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True), encoding="utf-8")
    return path


# ---------------------------------------------------------------------------
# inputs
# ---------------------------------------------------------------------------


@dataclass
class Inputs:
    sequence: object
    risk: object
    history: object
    engine: CovariateEngine
    term_specs: list
    t_start: int
    t_end: int


def study_config(cfg: RunConfig) -> StudyConfig:
    s = cfg.simulation
    return StudyConfig(n_senders=s.n_senders, n_receivers=s.n_receivers, t_start=s.t_start,
                       t_end=s.t_end, world_seed=s.world_seed, temp_sd=s.temp_sd,
                       level=s.level, baseline_growth=s.baseline_growth,
                       beta_climate=s.beta_climate, tv=tuple(s.tv), sender_sd=s.sender_sd,
                       receiver_sd=s.receiver_sd, k=cfg.model.k)


def _world_and_truth(cfg: RunConfig):
    study = study_config(cfg)
    world = study.world(n_strata=cfg.simulation.n_strata)
    return study, world, study.truth(world)


def _read_tables(cfg: RunConfig) -> CovariateTables:
    t = cfg.paths.tables
    return CovariateTables(
        distances={k: read_distance_csv(cfg.resolve(p)) for k, p in t.distances.items()},
        receiver_attributes={k: read_attribute_csv(cfg.resolve(p))
                             for k, p in t.receiver_attributes.items()},
        groups={k: read_group_csv(cfg.resolve(p)) for k, p in t.groups.items()},
        pair_tables={k: read_pair_csv(cfg.resolve(p)) for k, p in t.pairs.items()},
    )


def load_inputs(cfg: RunConfig) -> Inputs:
    if cfg.simulation is not None:
        study, world, truth = _world_and_truth(cfg)
        risk, history = world.initial_state()
        seeds = replication_seeds(derived_seed(cfg.seed, "simulate"), cfg.simulation.n_reps)
        seq = simulate_sequence(truth, risk, history, seeds[cfg.simulation.replication])
        specs = cfg.covariate_specs() or world.covariate_specs
        terms = cfg.term_specs() or study.term_specs()
        engine = CovariateEngine(specs, world.tables, history)
        return Inputs(seq, risk, history, engine, terms, world.t_start, world.t_end)
    seq, risk, history, _, report = load_network(
        cfg.resolve(cfg.paths.events), cfg.resolve(cfg.paths.native),
        cfg.resolve(cfg.paths.strata), cfg.t_start, cfg.t_end, cfg.resolve(cfg.paths.actors))
    if report.dropped_native or report.dropped_strata:
        log.info("dropped %d native and %d strata rows naming unknown actors",
                 report.dropped_native, report.dropped_strata)
    engine = CovariateEngine(cfg.covariate_specs(), _read_tables(cfg), history)
    return Inputs(seq, risk, history, engine, cfg.term_specs(), seq.t_start, seq.t_end)


def build_dataset(cfg: RunConfig, inp: Inputs):
    return build_case_control_dataset(inp.sequence, inp.risk, inp.history, inp.engine,
                                      m=cfg.model.m, matched=cfg.model.matched,
                                      seed=derived_seed(cfg.seed, "sample"),
                                      rare=cfg.model.rare_levels)


def _fit(cfg: RunConfig, dataset, terms):
    return fit_smooth_rem(dataset, terms, criterion=cfg.model.criterion)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def _write_world(world, out: Path) -> list[Path]:
    out.mkdir(parents=True, exist_ok=True)
    files = []
    p = out / "actors.csv"
    with open(p, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["role", "id"])
        w.writerows([("sender", s) for s in world.senders])
        w.writerows([("receiver", r) for r in world.receivers])
    files.append(p)
    p = out / "native.csv"
    with open(p, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["sender", "receiver"])
        w.writerows(world.native_range)
    files.append(p)
    p = out / "strata.csv"
    with open(p, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["sender", "stratum"])
        w.writerows(sorted(world.strata.items()))
    files.append(p)
    for name, D in world.tables.distances.items():
        p = out / f"distance_{name}.csv"
        with open(p, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["region_a", "region_b", "value"])
            for a in range(len(world.receivers)):
                for b in range(a + 1, len(world.receivers)):
                    w.writerow([world.receivers[a], world.receivers[b], repr(float(D[a, b]))])
        files.append(p)
    for name, table in world.tables.receiver_attributes.items():
        p = out / f"attribute_{name}.csv"
        with open(p, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["region", "year", "value"])
            for r in world.receivers:
                w.writerow([r, world.t_start - 1, repr(float(table[r]))])
        files.append(p)
    return files


def cmd_simulate(cfg: RunConfig, out: Path) -> list[Path]:
    _, world, truth = _world_and_truth(cfg)
    risk, history = world.initial_state()
    files = _write_world(world, out / "world")
    seeds = replication_seeds(derived_seed(cfg.seed, "simulate"), cfg.simulation.n_reps)

    def one(rep_seed):
        return simulate_sequence(truth, risk, history, rep_seed, return_replication=True)

    with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
        reps = list(pool.map(one, seeds))
    for r, rep in enumerate(reps):
        p = out / f"events_rep{r:03d}.csv"
        write_events_csv(p, rep.events)
        files.append(p)
        p = out / f"truth_rep{r:03d}.json"
        p.write_text(json.dumps({
            "seed": rep.seed,
            "truth_digest": truth.digest(),
            "n_events": len(rep.events),
            "sender_re": dict(zip(risk.index.senders, map(float, rep.sender_re))),
            "receiver_re": dict(zip(risk.index.receivers, map(float, rep.receiver_re))),
        }, indent=2, sort_keys=True), encoding="utf-8")
        files.append(p)
    return files


def cmd_sample(cfg: RunConfig, out: Path) -> list[Path]:
    ds = build_dataset(cfg, load_inputs(cfg))
    p = out / "case_control.csv"
    ds.to_csv(p)
    return [p, Path(str(p) + ".json")]


def _grid(cfg: RunConfig, inp: Inputs) -> np.ndarray:
    return np.linspace(inp.t_start, inp.t_end, cfg.report.grid_points)


def _write_curves(fit, grid, out: Path, prefix: str = "curve") -> list[Path]:
    files = []
    for b in fit.design.blocks:
        if b.kind == "time_varying":
            curve = evaluate_tv_effect(fit, b.name, grid)
            p = out / f"{prefix}_{b.name}.csv"
            curve.to_csv(p)
            files.append(p)
    return files


def cmd_fit(cfg: RunConfig, out: Path) -> list[Path]:
    inp = load_inputs(cfg)
    fit = _fit(cfg, build_dataset(cfg, inp), inp.term_specs)
    p = out / "fit.json"
    fit.to_json(p)
    return [p] + _write_curves(fit, _grid(cfg, inp), out)


def cmd_baseline(cfg: RunConfig, out: Path) -> list[Path]:
    inp = load_inputs(cfg)
    ds = build_dataset(cfg, inp)
    fit = _fit(cfg, ds, inp.term_specs)
    matched = breslow_matched(fit, ds)
    files = [out / "baseline_matched.csv"]
    write_baseline_csv(files[0], list(matched.values()))
    if len(matched) == 1 or cfg.model.matched:
        files.append(out / "baseline_pooled.csv")
        write_baseline_csv(files[1], [breslow_pooled(fit, ds)])
    return files


def cmd_gof(cfg: RunConfig, out: Path) -> list[Path]:
    inp = load_inputs(cfg)
    ds = build_dataset(cfg, inp)
    rep = gof_report(_fit(cfg, ds, inp.term_specs), ds, alpha=cfg.report.alpha,
                     min_events=cfg.report.min_events)
    files = [out / "gof.csv", out / "gof_summary.json"]
    rep.to_csv(files[0])
    rep.summary_json(files[1])
    return files


def cmd_report(cfg: RunConfig, out: Path) -> list[Path]:
    inp = load_inputs(cfg)
    ds = build_dataset(cfg, inp)
    by_name = {t.name: t for t in inp.term_specs}
    candidates = cfg.report.candidates or [[t.name for t in inp.term_specs]]

    def one(names):
        return _fit(cfg, ds, [by_name[n] for n in names])

    with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
        fits = list(pool.map(one, candidates))
    aic = np.array([f.aic_corrected for f in fits])
    best = int(np.argmin(aic))
    files = [out / "aic_table.csv"]
    with open(files[0], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["model", "terms", "log_pl", "edf", "edf_corrected", "aic", "delta_aic",
                    "minimum"])
        for i, (names, f) in enumerate(zip(candidates, fits)):
            w.writerow([i, "+".join(names), repr(f.log_pl), repr(f.edf_total),
                        repr(f.edf_corrected), repr(f.aic_corrected),
                        repr(float(aic[i] - aic[best])), "*" if i == best else ""])
    fit = fits[best]
    files += _write_curves(fit, _grid(cfg, inp), out, prefix="best_curve")
    gof = gof_report(fit, ds, alpha=cfg.report.alpha, min_events=cfg.report.min_events)
    summary = {
        "n_events": ds.n_events,
        "best_model": best,
        "best_terms": candidates[best],
        "aic": [float(a) for a in aic],
        "fit": fit.to_dict(),
        "gof": gof.summary,
    }
    p = out / "report.json"
    p.write_text(json.dumps(summary, indent=2, sort_keys=True), encoding="utf-8")
    files.append(p)
    return files


HANDLERS = {"simulate": cmd_simulate, "sample": cmd_sample, "fit": cmd_fit,
            "baseline": cmd_baseline, "gof": cmd_gof, "report": cmd_report}


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="TOML or JSON run configuration")
    common.add_argument("--seed", type=int, help="root seed (overrides config)")
    common.add_argument("--out", help="output directory (overrides config)")
    common.add_argument("--threads", type=int, help="worker threads for fan-out steps")
    common.add_argument("--criterion", choices=("reml", "gcv"), help="smoothing criterion")
    common.add_argument("--m", type=int, help="sampled-set size (case plus m-1 controls)")
    common.add_argument("--json-errors", action="store_true",
                        help="print errors as JSON on stdout")
    common.add_argument("-v", "--verbose", action="store_true")
    parser = argparse.ArgumentParser(prog="smoothrem", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"smoothrem {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=HANDLERS[name].__name__.replace("cmd_", ""))
    return parser


def apply_overrides(cfg: RunConfig, args) -> RunConfig:
    if args.seed is not None:
        cfg.seed = args.seed
    if args.threads is not None:
        cfg.threads = args.threads
    if args.out is not None:
        cfg.out = str(Path(args.out).resolve())
    if args.criterion is not None:
        cfg.model.criterion = args.criterion
    if args.m is not None:
        cfg.model.m = args.m
    return cfg


def run(command: str, cfg: RunConfig) -> list[Path]:
    validate(cfg, command)
    out = cfg.resolve(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            files = HANDLERS[command](cfg, out)
    except Exception as exc:  # noqa: BLE001 - re-raised with command context
        raise CommandError(command, exc) from exc
    write_manifest(cfg, command, out, files)
    return files


def _report_error(args, kind: str, message: str, problems=None) -> None:
    if getattr(args, "json_errors", False):
        print(json.dumps({"error": kind, "command": getattr(args, "command", None),
                          "message": message, "problems": problems or []}, sort_keys=True))
    else:
        print(f"smoothrem: {message}", file=sys.stderr)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = apply_overrides(load_config(args.config), args)
        files = run(args.command, cfg)
    except ConfigError as exc:
        _report_error(args, "config", str(exc), exc.problems)
        return 2
    except FileNotFoundError as exc:
        _report_error(args, "config", str(exc), [str(exc)])
        return 2
    except CommandError as exc:
        _report_error(args, type(exc.cause).__name__, str(exc))
        return 1
    for f in files:
        print(f)
    return 0


if __name__ == "__main__":
    sys.exit(main())
