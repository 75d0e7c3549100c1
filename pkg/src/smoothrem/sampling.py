"""Nested case-control sampling and the case-control dataset.

Each event is compared with ``m - 1`` controls drawn uniformly without
replacement from the dyads at risk at the event time (optionally only
from the case's stratum).  Every (case, control) pair becomes one row with
weight ``1 / (m - 1)``.
"""

from __future__ import annotations

import csv
import hashlib
import json
from fractions import Fraction
from math import comb
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .covariates import CovariateEngine, relabel_rare
from .events import Event, EventSequence, History, RiskSet, apply_event


class SamplingExhausted(RuntimeError):
    def __init__(self, event_index: int, n_available: int, m: int):
        self.event_index = event_index
        self.n_available = n_available
        self.m = m
        super().__init__(
            f"event {event_index}: only {n_available} dyad(s) at risk, cannot draw m={m}"
        )


def event_rng(seed: int, event_index: int) -> np.random.Generator:
    """Independent stream per event so changing ``m`` leaves other events' draws alone."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(event_index)]))


def set_probability(n_available: int, m: int) -> Fraction:
    """Probability of one particular sampled set: ``1 / C(n' - 1, m - 1)``."""
    if m < 2 or n_available < m:
        raise ValueError(f"need 2 <= m <= n', got m={m}, n'={n_available}")
    return Fraction(1, comb(n_available - 1, m - 1))


@dataclass
class SampledRiskSet:
    event_index: int
    case: int
    controls: np.ndarray
    weight_per_control: float
    stratum: int
    n_at_risk: int
    n_stratum: int

    matched: bool = True

    @property
    def members(self) -> np.ndarray:
        return np.concatenate([[self.case], self.controls])

    @property
    def probability(self) -> Fraction:
        n = self.n_stratum if self.matched else self.n_at_risk
        return set_probability(n, self.controls.size + 1)


def sample_controls(event, risk_set: RiskSet, m: int = 2, matched: bool = True,
                    rng=0, event_index: int = 0) -> SampledRiskSet:
    """Draw ``m - 1`` distinct controls for the case dyad.

    ``event`` is an :class:`Event` or a dyad code; ``rng`` is a seed or a
    ``numpy.random.Generator``.  The case itself must be at risk.
    """
    if m < 2:
        raise ValueError("m must be at least 2")
    if isinstance(event, Event):
        case = risk_set.index.code(event.sender, event.receiver)
    else:
        case = int(event)
    if case not in risk_set:
        raise ValueError(f"case {risk_set.index.dyad(case)} is not at risk")
    if not isinstance(rng, np.random.Generator):
        rng = event_rng(rng, event_index)

    g = risk_set.stratum_of_code(case)
    n_total, n_g = risk_set.n, risk_set.n_g(g)
    if matched:
        available = n_g
        case_pos = risk_set.position(case)
    else:
        available = n_total
        sizes = np.array([risk_set.n_g(k) for k in range(len(risk_set.index.strata))])
        offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]])
        case_pos = int(offsets[g]) + risk_set.position(case)
    if available < m:
        raise SamplingExhausted(event_index, available, m)

    picks = rng.choice(available - 1, size=m - 1, replace=False)
    picks = picks + (picks >= case_pos)
    if matched:
        controls = np.array([risk_set.member_at(g, int(p)) for p in picks], dtype=np.int64)
    else:
        strata_of = np.searchsorted(offsets, picks, side="right") - 1
        controls = np.array(
            [risk_set.member_at(int(k), int(p - offsets[k])) for k, p in zip(strata_of, picks)],
            dtype=np.int64,
        )
    return SampledRiskSet(event_index, case, controls, 1.0 / (m - 1), g, n_total, n_g, matched)


@dataclass
class CaseControlDataset:
    """One row per (case, control) pair, rows of an event contiguous.

    Absolute covariate values of both dyads are kept alongside their
    difference because baseline and goodness-of-fit estimators need
    per-dyad rates.
    """

    event_index: np.ndarray
    year: np.ndarray
    stratum: np.ndarray
    control_stratum: np.ndarray
    weight: np.ndarray
    x_case: np.ndarray
    x_control: np.ndarray
    case_labels: dict
    control_labels: dict
    case_sender: np.ndarray
    case_receiver: np.ndarray
    control_sender: np.ndarray
    control_receiver: np.ndarray
    n_at_risk: np.ndarray
    n_stratum: np.ndarray
    covariate_names: list
    factor_names: list
    meta: dict = field(default_factory=dict)

    @property
    def x_diff(self) -> np.ndarray:
        return self.x_case - self.x_control

    @property
    def n_rows(self) -> int:
        return int(self.event_index.size)

    @property
    def n_events(self) -> int:
        return int(np.unique(self.event_index).size)

    @property
    def m(self) -> int:
        return int(self.meta.get("m", 2))

    def column(self, name: str, which: str = "diff") -> np.ndarray:
        k = self.covariate_names.index(name)
        src = {"diff": self.x_diff, "case": self.x_case, "control": self.x_control}[which]
        return src[:, k]

    def subset(self, rows) -> "CaseControlDataset":
        rows = np.asarray(rows)
        return CaseControlDataset(
            event_index=self.event_index[rows],
            year=self.year[rows],
            stratum=self.stratum[rows],
            control_stratum=self.control_stratum[rows],
            weight=self.weight[rows],
            x_case=self.x_case[rows],
            x_control=self.x_control[rows],
            case_labels={k: v[rows] for k, v in self.case_labels.items()},
            control_labels={k: v[rows] for k, v in self.control_labels.items()},
            case_sender=self.case_sender[rows],
            case_receiver=self.case_receiver[rows],
            control_sender=self.control_sender[rows],
            control_receiver=self.control_receiver[rows],
            n_at_risk=self.n_at_risk[rows],
            n_stratum=self.n_stratum[rows],
            covariate_names=list(self.covariate_names),
            factor_names=list(self.factor_names),
            meta=dict(self.meta),
        )

    # -- serialization ----------------------------------------------------

    def to_csv(self, path, sidecar: bool = True) -> None:
        cols = ["event_index", "year", "stratum", "weight"]
        cols += [f"x_diff_{n}" for n in self.covariate_names]
        for f in self.factor_names:
            cols += [f"case_label_{f}", f"control_label_{f}"]
        cols += [f"case_{n}" for n in self.covariate_names]
        cols += [f"control_{n}" for n in self.covariate_names]
        cols += ["case_sender", "case_receiver", "control_sender", "control_receiver",
                 "control_stratum", "n_at_risk", "n_stratum"]
        xd = self.x_diff
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            for k in range(self.n_rows):
                row = [int(self.event_index[k]), int(self.year[k]), self.stratum[k],
                       repr(float(self.weight[k]))]
                row += [repr(float(v)) for v in xd[k]]
                for f in self.factor_names:
                    row += [self.case_labels[f][k], self.control_labels[f][k]]
                row += [repr(float(v)) for v in self.x_case[k]]
                row += [repr(float(v)) for v in self.x_control[k]]
                row += [self.case_sender[k], self.case_receiver[k], self.control_sender[k],
                        self.control_receiver[k], self.control_stratum[k],
                        int(self.n_at_risk[k]), int(self.n_stratum[k])]
                w.writerow(row)
        if sidecar:
            Path(str(path) + ".json").write_text(json.dumps(self.meta, indent=2, sort_keys=True))

    @classmethod
    def from_csv(cls, path, covariate_names: Sequence[str] | None = None,
                 factor_names: Sequence[str] | None = None) -> "CaseControlDataset":
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            fields = reader.fieldnames or []
            rows = list(reader)
        if covariate_names is None:
            covariate_names = [c[len("x_diff_"):] for c in fields if c.startswith("x_diff_")]
        if factor_names is None:
            factor_names = [c[len("case_label_"):] for c in fields if c.startswith("case_label_")]
        meta_path = Path(str(path) + ".json")
        meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}

        def col(name, conv=str):
            return np.array([conv(r[name]) for r in rows]) if rows else np.array([], dtype=object)

        p = len(covariate_names)
        x_case = np.array([[float(r[f"case_{n}"]) for n in covariate_names] for r in rows]).reshape(-1, p)
        x_control = np.array([[float(r[f"control_{n}"]) for n in covariate_names] for r in rows]).reshape(-1, p)
        return cls(
            event_index=col("event_index", int),
            year=col("year", int),
            stratum=col("stratum").astype(object),
            control_stratum=col("control_stratum").astype(object),
            weight=col("weight", float),
            x_case=x_case,
            x_control=x_control,
            case_labels={f: col(f"case_label_{f}").astype(object) for f in factor_names},
            control_labels={f: col(f"control_label_{f}").astype(object) for f in factor_names},
            case_sender=col("case_sender").astype(object),
            case_receiver=col("case_receiver").astype(object),
            control_sender=col("control_sender").astype(object),
            control_receiver=col("control_receiver").astype(object),
            n_at_risk=col("n_at_risk", int),
            n_stratum=col("n_stratum", int),
            covariate_names=list(covariate_names),
            factor_names=list(factor_names),
            meta=meta,
        )


def spec_hash(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=str).encode()).hexdigest()[:16]


def build_case_control_dataset(
    sequence: EventSequence,
    risk_set: RiskSet,
    history: History,
    engine: CovariateEngine,
    m: int = 2,
    matched: bool = True,
    seed: int = 0,
    rare: bool = True,
) -> CaseControlDataset:
    """Replay ``sequence``, sampling controls before each event's removal.

    ``risk_set`` and ``history`` are the state before the first event and
    are not modified.  Covariates come from ``engine``'s specs, evaluated on
    the replayed history.  With ``rare=True`` singleton levels of
    last-arrival label columns become ``"Rare interaction"``.
    """
    risk = risk_set.copy()
    hist = history.copy()
    eng = CovariateEngine(engine.specs, engine.tables, hist)
    index = risk.index
    strata = index.strata
    n_r = index.n_receivers

    ev_idx, years, case_codes, ctrl_codes, n_tot, n_grp = [], [], [], [], [], []
    x_case_rows, x_ctrl_rows = [], []
    case_lab = [[] for _ in eng.factors]
    ctrl_lab = [[] for _ in eng.factors]

    for k, event in enumerate(sequence):
        srs = sample_controls(event, risk, m, matched, event_rng(seed, k), event_index=k)
        reps = srs.controls.size
        codes = srs.members
        s_idx, r_idx = codes // n_r, codes % n_r
        x = eng.values_many(s_idx, r_idx, event.year)
        labs = eng.labels_many(s_idx, r_idx, event.year)
        ev_idx += [k] * reps
        years += [event.year] * reps
        case_codes += [srs.case] * reps
        ctrl_codes += list(srs.controls)
        n_tot += [srs.n_at_risk] * reps
        n_grp += [srs.n_stratum] * reps
        x_case_rows.append(np.repeat(x[:1], reps, axis=0))
        x_ctrl_rows.append(x[1:])
        for f, col in enumerate(labs):
            case_lab[f] += [col[0]] * reps
            ctrl_lab[f] += col[1:]
        apply_event(risk, hist, event)

    case_codes = np.asarray(case_codes, dtype=np.int64)
    ctrl_codes = np.asarray(ctrl_codes, dtype=np.int64)
    p = len(eng.numeric)
    senders = np.array(index.senders, dtype=object)
    receivers = np.array(index.receivers, dtype=object)
    strata_arr = np.array(strata, dtype=object)
    case_labels, control_labels = {}, {}
    for f, spec in enumerate(eng.factors):
        a, b = case_lab[f], ctrl_lab[f]
        if rare and spec.kind == "last_arrival":
            both = relabel_rare(a + b)
            a, b = both[: len(a)], both[len(a):]
        case_labels[spec.name] = np.array(a, dtype=object)
        control_labels[spec.name] = np.array(b, dtype=object)

    n_rows = len(ev_idx)
    meta = {
        "seed": int(seed),
        "m": int(m),
        "matched": bool(matched),
        "n_events": len(sequence),
        "spec_hash": spec_hash([(s.name, s.kind, s.table, s.transform, s.offset) for s in eng.specs]),
        "strata": list(strata),
        "t_start": int(sequence.t_start),
        "t_end": int(sequence.t_end),
    }
    return CaseControlDataset(
        event_index=np.asarray(ev_idx, dtype=int),
        year=np.asarray(years, dtype=int),
        stratum=strata_arr[index.sender_stratum[case_codes // n_r]] if n_rows else np.array([], dtype=object),
        control_stratum=strata_arr[index.sender_stratum[ctrl_codes // n_r]] if n_rows else np.array([], dtype=object),
        weight=np.full(n_rows, 1.0 / (m - 1)),
        x_case=np.concatenate(x_case_rows) if x_case_rows else np.empty((0, p)),
        x_control=np.concatenate(x_ctrl_rows) if x_ctrl_rows else np.empty((0, p)),
        case_labels=case_labels,
        control_labels=control_labels,
        case_sender=senders[case_codes // n_r] if n_rows else np.array([], dtype=object),
        case_receiver=receivers[case_codes % n_r] if n_rows else np.array([], dtype=object),
        control_sender=senders[ctrl_codes // n_r] if n_rows else np.array([], dtype=object),
        control_receiver=receivers[ctrl_codes % n_r] if n_rows else np.array([], dtype=object),
        n_at_risk=np.asarray(n_tot, dtype=int),
        n_stratum=np.asarray(n_grp, dtype=int),
        covariate_names=eng.names,
        factor_names=eng.factor_names,
        meta=meta,
    )


def exclude_missing_origin(risk_set: RiskSet, history: History, year: int) -> int:
    """Drop dyads of senders with no occupied receiver before ``year``; returns the count."""
    index = risk_set.index
    no_origin = np.flatnonzero(~history.has_origin(year))
    removed = 0
    for i in no_origin:
        for j in range(index.n_receivers):
            code = int(i) * index.n_receivers + j
            if code in risk_set:
                risk_set.remove(code)
                removed += 1
    return removed
