"""Run configuration for the command-line pipeline.

A run is described by one TOML or JSON document::

    seed = 7
    out = "out"

    [paths]                 # real data mode
    events = "events.csv"
    native = "native.csv"

    [simulation]            # or synthetic mode (exactly one of the two)
    n_reps = 3

    [model]
    m = 2
    terms = [{name = "climate", kind = "linear", covariate = "climate"}]

    [report]
    candidates = [["climate"], ["climate", "distance"]]

Command-line flags override the corresponding document values.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .basis import TermSpec
from .covariates import CovariateSpec

CRITERIA = ("reml", "gcv")
TERM_KINDS = ("linear", "time_varying", "random_effect")


class ConfigError(ValueError):
    """Raised with the full list of validation problems."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("invalid configuration:\n  - " + "\n  - ".join(self.problems))


@dataclass
class TablePaths:
    distances: dict = field(default_factory=dict)
    receiver_attributes: dict = field(default_factory=dict)
    groups: dict = field(default_factory=dict)
    pairs: dict = field(default_factory=dict)

    def all_paths(self):
        for kind in ("distances", "receiver_attributes", "groups", "pairs"):
            for name, p in getattr(self, kind).items():
                yield f"tables.{kind}.{name}", p


@dataclass
class PathsConfig:
    events: str | None = None
    native: str | None = None
    strata: str | None = None
    actors: str | None = None
    tables: TablePaths = field(default_factory=TablePaths)


@dataclass
class ModelConfig:
    terms: list = field(default_factory=list)
    covariates: list = field(default_factory=list)
    m: int = 2
    matched: bool = True
    criterion: str = "reml"
    k: int = 10
    rare_levels: bool = True


@dataclass
class SimulationConfig:
    n_reps: int = 1
    replication: int = 0
    n_senders: int = 30
    n_receivers: int = 20
    t_start: int = 1880
    t_end: int = 2005
    n_strata: int = 1
    world_seed: int = 1
    temp_sd: float = 2.0
    level: float = 0.03
    baseline_growth: float = 0.5
    beta_climate: float = -0.8
    tv: tuple = (-1.5, 0.0)
    sender_sd: float = 0.5
    receiver_sd: float = 0.5


@dataclass
class ReportConfig:
    candidates: list = field(default_factory=list)
    grid_points: int = 50
    alpha: float = 0.05
    min_events: int = 5


@dataclass
class RunConfig:
    seed: int = 0
    out: str = "out"
    threads: int = 1
    t_start: int | None = None
    t_end: int | None = None
    paths: PathsConfig = field(default_factory=PathsConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    simulation: SimulationConfig | None = None
    report: ReportConfig = field(default_factory=ReportConfig)
    base_dir: str = "."
    parse_problems: list = field(default_factory=list)

    def resolve(self, p: str | None) -> Path | None:
        if p is None:
            return None
        p = Path(p)
        return p if p.is_absolute() else Path(self.base_dir) / p

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d.pop("base_dir")
        d.pop("parse_problems")
        return d

    def config_hash(self) -> str:
        text = json.dumps(self.to_dict(), sort_keys=True, default=str)
        return hashlib.sha256(text.encode()).hexdigest()

    def term_specs(self) -> list[TermSpec]:
        out = []
        for t in self.model.terms:
            t = dict(t)
            if t.get("kind") == "time_varying":
                t.setdefault("k", self.model.k)
            out.append(TermSpec.from_dict(t))
        return out

    def covariate_specs(self) -> list[CovariateSpec]:
        return [CovariateSpec.from_dict(c) for c in self.model.covariates]


def _build(cls, data: dict, where: str, problems: list):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        problems.append(f"{where}: expected a table")
        return cls()
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    for k in unknown:
        problems.append(f"{where}: unknown key {k!r}")
    return cls(**{k: v for k, v in data.items() if k in names})


def config_from_dict(data: dict, base_dir=".") -> RunConfig:
    problems: list[str] = []
    data = dict(data)
    paths = dict(data.pop("paths", {}) or {})
    tables = _build(TablePaths, paths.pop("tables", None), "paths.tables", problems)
    cfg = RunConfig(
        paths=_build(PathsConfig, paths, "paths", problems),
        model=_build(ModelConfig, data.pop("model", None), "model", problems),
        report=_build(ReportConfig, data.pop("report", None), "report", problems),
        simulation=(_build(SimulationConfig, data.pop("simulation"), "simulation", problems)
                    if "simulation" in data else None),
        base_dir=str(base_dir),
    )
    cfg.paths.tables = tables
    for k, v in data.items():
        if k in ("seed", "out", "threads", "t_start", "t_end"):
            setattr(cfg, k, v)
        else:
            problems.append(f"unknown top-level key {k!r}")
    if cfg.simulation is not None:
        cfg.simulation.tv = tuple(cfg.simulation.tv)
    # reported together with the semantic checks by validate()
    cfg.parse_problems = problems
    return cfg


def load_config(path) -> RunConfig:
    """Read a TOML or JSON document (chosen by content, not extension)."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    try:
        data = json.loads(text)
    except json.JSONDecodeError:
        try:
            data = tomllib.loads(text)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError([f"{path}: neither valid JSON nor TOML ({exc})"]) from None
    return config_from_dict(data, base_dir=path.parent)


def validate(cfg: RunConfig, command: str) -> None:
    """Collect every problem and raise one :class:`ConfigError`."""
    problems = list(cfg.parse_problems)
    has_events = cfg.paths.events is not None
    has_sim = cfg.simulation is not None
    if command == "simulate":
        if not has_sim:
            problems.append("simulate needs a [simulation] block")
    elif has_events == has_sim:
        problems.append("exactly one of paths.events and [simulation] is required")

    labelled = [("paths.events", cfg.paths.events), ("paths.native", cfg.paths.native),
                ("paths.strata", cfg.paths.strata), ("paths.actors", cfg.paths.actors)]
    for where, p in labelled + list(cfg.paths.tables.all_paths()):
        if p is not None and not cfg.resolve(p).exists():
            problems.append(f"{where}: file not found: {cfg.resolve(p)}")

    m = cfg.model
    if not isinstance(m.m, int) or m.m < 2:
        problems.append(f"model.m must be an integer >= 2, got {m.m!r}")
    if m.criterion not in CRITERIA:
        problems.append(f"model.criterion must be one of {CRITERIA}, got {m.criterion!r}")
    if not isinstance(m.k, int) or m.k < 3:
        problems.append(f"model.k must be an integer >= 3, got {m.k!r}")
    if not isinstance(cfg.seed, int) or cfg.seed < 0:
        problems.append(f"seed must be a non-negative integer, got {cfg.seed!r}")
    if not isinstance(cfg.threads, int) or cfg.threads < 1:
        problems.append(f"threads must be a positive integer, got {cfg.threads!r}")

    term_names = []
    for i, t in enumerate(m.terms):
        if not isinstance(t, dict):
            problems.append(f"model.terms[{i}]: expected a table")
            continue
        for key in ("name", "kind"):
            if key not in t:
                problems.append(f"model.terms[{i}]: missing {key!r}")
        if t.get("kind") not in TERM_KINDS:
            problems.append(f"model.terms[{i}]: kind must be one of {TERM_KINDS}")
        term_names.append(t.get("name"))
    if len(set(term_names)) != len(term_names):
        problems.append("model.terms: duplicate term names")
    for i, c in enumerate(m.covariates):
        try:
            CovariateSpec.from_dict(c)
        except (TypeError, ValueError, KeyError) as exc:
            problems.append(f"model.covariates[{i}]: {exc}")
    if not m.terms and not has_sim and command != "simulate":
        problems.append("model.terms is empty")
    if has_events and not m.covariates:
        problems.append("model.covariates is empty")

    if has_sim:
        s = cfg.simulation
        if s.n_reps < 1:
            problems.append("simulation.n_reps must be >= 1")
        if not 0 <= s.replication < max(s.n_reps, 1):
            problems.append("simulation.replication must index one of the n_reps replications")
        if s.t_end <= s.t_start:
            problems.append("simulation.t_end must exceed simulation.t_start")

    r = cfg.report
    known = set(term_names)
    for i, cand in enumerate(r.candidates):
        if not cand:
            problems.append(f"report.candidates[{i}] is empty")
        missing = [n for n in cand if known and n not in known]
        if missing:
            problems.append(f"report.candidates[{i}]: unknown terms {missing}")
    if r.grid_points < 2:
        problems.append("report.grid_points must be >= 2")
    if not 0 < r.alpha < 1:
        problems.append("report.alpha must lie in (0, 1)")
    if problems:
        raise ConfigError(problems)
