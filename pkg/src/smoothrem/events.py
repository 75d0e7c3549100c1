"""Relational event graph: event sequences, the evolving risk set and the history.

Actors are stored by integer position.  A dyad (sender ``i``, receiver ``j``)
has the integer code ``i * n_receivers + j``; the risk set keeps one
contiguous code array per stratum so that uniform sampling and removal are
both O(1).
"""

from __future__ import annotations

import bisect
import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

log = logging.getLogger(__name__)

#: first-arrival year used for native-range occupancy; precedes every observed year
NATIVE_YEAR = -np.inf
DEFAULT_STRATUM = "all"


class ValidationError(ValueError):
    """Input data refer to unknown actors or are otherwise malformed."""


class SequencingError(ValueError):
    """An event was applied to a dyad that is not at risk."""


@dataclass(frozen=True)
class Dyad:
    sender: str
    receiver: str
    stratum: str = DEFAULT_STRATUM


@dataclass(frozen=True)
class Event:
    dyad: Dyad
    year: int
    within_year_rank: int = 0

    @property
    def sender(self) -> str:
        return self.dyad.sender

    @property
    def receiver(self) -> str:
        return self.dyad.receiver

    @property
    def key(self) -> tuple[int, int]:
        return (self.year, self.within_year_rank)


@dataclass
class EventSequence:
    """Events sorted by ``(year, within_year_rank)`` inside ``[t_start, t_end]``."""

    events: list[Event]
    t_start: int
    t_end: int

    def __post_init__(self):
        self.events = sorted(self.events, key=lambda e: e.key)
        bad = [e for e in self.events if not self.t_start <= e.year <= self.t_end]
        if bad:
            raise ValidationError(
                f"{len(bad)} event(s) outside window [{self.t_start}, {self.t_end}], "
                f"first: {bad[0]}"
            )

    def __len__(self) -> int:
        return len(self.events)

    def __iter__(self):
        return iter(self.events)

    def __getitem__(self, k):
        return self.events[k]

    @property
    def years(self) -> np.ndarray:
        return np.array([e.year for e in self.events], dtype=int)

    @classmethod
    def from_records(
        cls,
        records: Iterable[tuple],
        strata: Mapping[str, str] | None = None,
        t_start: int | None = None,
        t_end: int | None = None,
    ) -> "EventSequence":
        """Build from ``(sender, receiver, year[, rank])`` tuples.

        Missing ranks follow input order within each year.
        """
        strata = strata or {}
        events = []
        next_rank: dict[int, int] = {}
        for rec in records:
            sender, receiver, year = rec[0], rec[1], int(rec[2])
            if len(rec) > 3 and rec[3] is not None and rec[3] != "":
                rank = int(rec[3])
            else:
                rank = next_rank.get(year, 0)
            next_rank[year] = max(next_rank.get(year, 0), rank + 1)
            dyad = Dyad(str(sender), str(receiver), strata.get(str(sender), DEFAULT_STRATUM))
            events.append(Event(dyad, year, rank))
        years = [e.year for e in events]
        if t_start is None:
            t_start = min(years) if years else 0
        if t_end is None:
            t_end = max(years) if years else t_start
        return cls(events, t_start, t_end)


class ActorIndex:
    """Integer positions for senders, receivers and strata."""

    def __init__(
        self,
        senders: Sequence[str],
        receivers: Sequence[str],
        strata: Mapping[str, str] | None = None,
    ):
        self.senders = [str(s) for s in senders]
        self.receivers = [str(r) for r in receivers]
        if len(set(self.senders)) != len(self.senders):
            raise ValidationError("duplicate sender ids")
        if len(set(self.receivers)) != len(self.receivers):
            raise ValidationError("duplicate receiver ids")
        overlap = set(self.senders) & set(self.receivers)
        if overlap:
            raise ValidationError(
                f"sender and receiver ids must be disjoint, shared: {sorted(overlap)[:5]}"
            )
        self.sender_pos = {s: i for i, s in enumerate(self.senders)}
        self.receiver_pos = {r: j for j, r in enumerate(self.receivers)}

        strata = dict(strata or {})
        unknown = [s for s in strata if s not in self.sender_pos]
        if unknown:
            raise ValidationError(f"unknown sender id in strata map: {unknown[0]!r}")
        labels = [strata.get(s, DEFAULT_STRATUM) for s in self.senders]
        self.strata = sorted(set(labels)) if labels else [DEFAULT_STRATUM]
        self.stratum_pos = {g: k for k, g in enumerate(self.strata)}
        self.sender_stratum = np.array([self.stratum_pos[g] for g in labels], dtype=int)

    @property
    def n_senders(self) -> int:
        return len(self.senders)

    @property
    def n_receivers(self) -> int:
        return len(self.receivers)

    @property
    def n_dyads(self) -> int:
        return self.n_senders * self.n_receivers

    def code(self, sender: str, receiver: str) -> int:
        try:
            i = self.sender_pos[sender]
        except KeyError:
            raise ValidationError(f"unknown sender id {sender!r}") from None
        try:
            j = self.receiver_pos[receiver]
        except KeyError:
            raise ValidationError(f"unknown receiver id {receiver!r}") from None
        return i * self.n_receivers + j

    def split(self, code):
        return np.divmod(code, self.n_receivers)

    def stratum_of_sender(self, sender: str) -> str:
        return self.strata[self.sender_stratum[self.sender_pos[sender]]]

    def dyad(self, code: int) -> Dyad:
        i, j = divmod(int(code), self.n_receivers)
        return Dyad(self.senders[i], self.receivers[j], self.strata[self.sender_stratum[i]])


class RiskSet:
    """Dyads still at risk, stored per stratum with swap-delete removal."""

    def __init__(self, index: ActorIndex, at_risk_mask: np.ndarray):
        self.index = index
        n_g = len(index.strata)
        code_stratum = np.repeat(index.sender_stratum, index.n_receivers)
        self._members: list[np.ndarray] = []
        self._size = np.zeros(n_g, dtype=int)
        self._pos = np.full(index.n_dyads, -1, dtype=np.int64)
        for g in range(n_g):
            codes = np.flatnonzero(at_risk_mask & (code_stratum == g)).astype(np.int64)
            self._members.append(codes)
            self._size[g] = codes.size
            self._pos[codes] = np.arange(codes.size)

    @property
    def n(self) -> int:
        return int(self._size.sum())

    def n_g(self, stratum) -> int:
        g = stratum if isinstance(stratum, (int, np.integer)) else self.index.stratum_pos[stratum]
        return int(self._size[g])

    @property
    def counts(self) -> dict[str, int]:
        return {g: int(self._size[k]) for k, g in enumerate(self.index.strata)}

    def __len__(self) -> int:
        return self.n

    def __contains__(self, code) -> bool:
        return 0 <= code < self._pos.size and self._pos[code] >= 0

    def contains(self, sender: str, receiver: str) -> bool:
        return self.index.code(sender, receiver) in self

    def stratum_of_code(self, code: int) -> int:
        return int(self.index.sender_stratum[code // self.index.n_receivers])

    def members(self, stratum=None) -> np.ndarray:
        """Codes currently at risk (a copy), optionally for one stratum index."""
        if stratum is None:
            parts = [m[: s] for m, s in zip(self._members, self._size)]
            return np.concatenate(parts) if parts else np.empty(0, dtype=np.int64)
        return self._members[stratum][: self._size[stratum]].copy()

    def member_at(self, stratum: int, position: int) -> int:
        return int(self._members[stratum][position])

    def position(self, code: int) -> int:
        return int(self._pos[code])

    def remove(self, code: int) -> None:
        pos = self._pos[code]
        if pos < 0:
            raise SequencingError(f"dyad {self.index.dyad(code)} is not at risk")
        g = self.stratum_of_code(code)
        last = self._size[g] - 1
        arr = self._members[g]
        moved = arr[last]
        arr[pos] = moved
        self._pos[moved] = pos
        arr[last] = code
        self._pos[code] = -1
        self._size[g] = last

    def at_risk_mask(self) -> np.ndarray:
        return self._pos >= 0

    def copy(self) -> "RiskSet":
        new = object.__new__(RiskSet)
        new.index = self.index
        new._members = [m.copy() for m in self._members]
        new._size = self._size.copy()
        new._pos = self._pos.copy()
        return new


class History:
    """Occupancy and per-receiver arrival order.

    ``first_year[i, j]`` is the year sender ``i`` reached receiver ``j``
    (``NATIVE_YEAR`` for native range, ``+inf`` if never).  A query at
    ``year`` only sees entries with ``first_year < year``, so events of the
    query year are never visible.
    """

    def __init__(self, index: ActorIndex):
        self.index = index
        self.first_year = np.full((index.n_senders, index.n_receivers), np.inf)
        self._arr_years: list[list[float]] = [[] for _ in range(index.n_receivers)]
        self._arr_senders: list[list[int]] = [[] for _ in range(index.n_receivers)]

    def add_native(self, i: int, j: int) -> None:
        if np.isfinite(self.first_year[i, j]) or self.first_year[i, j] == NATIVE_YEAR:
            return
        self.first_year[i, j] = NATIVE_YEAR
        # natives precede every event
        k = bisect.bisect_right(self._arr_years[j], NATIVE_YEAR)
        self._arr_years[j].insert(k, NATIVE_YEAR)
        self._arr_senders[j].insert(k, i)

    def add_arrival(self, i: int, j: int, year: int) -> None:
        if self._arr_years[j] and self._arr_years[j][-1] > year:
            raise SequencingError(
                f"arrival at year {year} precedes recorded arrivals in "
                f"{self.index.receivers[j]!r}"
            )
        self.first_year[i, j] = min(self.first_year[i, j], year)
        self._arr_years[j].append(float(year))
        self._arr_senders[j].append(i)

    def occupied(self, i: int, year: int) -> np.ndarray:
        """Boolean mask over receivers occupied by sender ``i`` before ``year``."""
        return self.first_year[i] < year

    def occupancy(self, year: int) -> np.ndarray:
        return self.first_year < year

    def last_arrival(self, j: int, year: int) -> int | None:
        """Sender index of the latest arrival in receiver ``j`` strictly before ``year``."""
        k = bisect.bisect_left(self._arr_years[j], year)
        return self._arr_senders[j][k - 1] if k > 0 else None

    def arrivals(self, j: int) -> list[tuple[int, float]]:
        return list(zip(self._arr_senders[j], self._arr_years[j]))

    def has_origin(self, year: int) -> np.ndarray:
        """Per-sender flag: occupies at least one receiver before ``year``."""
        return (self.first_year < year).any(axis=1)

    def copy(self) -> "History":
        new = object.__new__(History)
        new.index = self.index
        new.first_year = self.first_year.copy()
        new._arr_years = [list(a) for a in self._arr_years]
        new._arr_senders = [list(a) for a in self._arr_senders]
        return new


def _native_codes(index: ActorIndex, native_range: Iterable[tuple[str, str]]) -> np.ndarray:
    codes = [index.code(str(s), str(r)) for s, r in native_range]
    return np.asarray(codes, dtype=np.int64)


def build_risk_set(
    senders: Sequence[str],
    receivers: Sequence[str],
    native_range: Iterable[tuple[str, str]] = (),
    strata: Mapping[str, str] | None = None,
) -> RiskSet:
    """All sender x receiver dyads minus the native range, split by stratum."""
    index = ActorIndex(senders, receivers, strata)
    mask = np.ones(index.n_dyads, dtype=bool)
    mask[_native_codes(index, native_range)] = False
    return RiskSet(index, mask)


def build_history(index: ActorIndex, native_range: Iterable[tuple[str, str]] = ()) -> History:
    history = History(index)
    for s, r in native_range:
        history.add_native(index.sender_pos[str(s)], index.receiver_pos[str(r)])
    return history


def initial_state(
    senders: Sequence[str],
    receivers: Sequence[str],
    native_range: Iterable[tuple[str, str]] = (),
    strata: Mapping[str, str] | None = None,
) -> tuple[RiskSet, History]:
    native_range = list(native_range)
    risk = build_risk_set(senders, receivers, native_range, strata)
    return risk, build_history(risk.index, native_range)


def apply_event(risk_set: RiskSet, history: History, event: Event) -> tuple[RiskSet, History]:
    """Remove the event's dyad from the risk set and record the arrival (in place)."""
    index = risk_set.index
    code = index.code(event.sender, event.receiver)
    if code not in risk_set:
        raise SequencingError(
            f"event {event.sender}->{event.receiver} at {event.year} is on a dyad "
            "not at risk (duplicate or native range)"
        )
    risk_set.remove(code)
    i, j = divmod(code, index.n_receivers)
    history.add_arrival(i, j, event.year)
    return risk_set, history


@dataclass(frozen=True)
class Violation:
    event_index: int
    rule: str
    message: str


def validate_sequence(events: Sequence[Event], risk_set_initial: RiskSet) -> list[Violation]:
    """Violations of ordering, non-recurrence and risk-set membership."""
    index = risk_set_initial.index
    out: list[Violation] = []
    seen: set[int] = set()
    prev = None
    for k, e in enumerate(events):
        if prev is not None and e.key <= prev:
            out.append(Violation(k, "ordering", f"event {k} at {e.key} follows {prev}"))
        prev = e.key if prev is None else max(prev, e.key)
        try:
            code = index.code(e.sender, e.receiver)
        except ValidationError as exc:
            out.append(Violation(k, "unknown_actor", str(exc)))
            continue
        if code in seen:
            out.append(Violation(k, "recurrence", f"dyad {e.sender}->{e.receiver} repeats"))
        elif code not in risk_set_initial:
            out.append(
                Violation(k, "exclusion", f"dyad {e.sender}->{e.receiver} is not in the risk set")
            )
        seen.add(code)
    return out


# ---------------------------------------------------------------------------
# CSV input
# ---------------------------------------------------------------------------


@dataclass
class LoadReport:
    n_events: int = 0
    dropped_native: int = 0
    dropped_strata: int = 0
    notes: list[str] = field(default_factory=list)


def _read_rows(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise ValidationError(f"{path}: missing header row")
        return list(reader)


def read_events_csv(path) -> list[tuple]:
    rows = _read_rows(path)
    if rows and not {"sender", "receiver", "year"} <= set(rows[0]):
        raise ValidationError(f"{path}: expected columns sender,receiver,year[,rank]")
    return [(r["sender"], r["receiver"], int(r["year"]), r.get("rank")) for r in rows]


def read_pairs_csv(path, a: str, b: str) -> list[tuple[str, str]]:
    rows = _read_rows(path)
    if rows and not {a, b} <= set(rows[0]):
        raise ValidationError(f"{path}: expected columns {a},{b}")
    return [(r[a], r[b]) for r in rows]


def write_events_csv(path, sequence: EventSequence) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["sender", "receiver", "year", "rank"])
        for e in sequence:
            w.writerow([e.sender, e.receiver, e.year, e.within_year_rank])


def load_network(
    events_path,
    native_path=None,
    strata_path=None,
    t_start: int | None = None,
    t_end: int | None = None,
    actors_path=None,
):
    """Read the CSV inputs; actors are those appearing in the events.

    An optional ``actors_path`` (columns ``role,id`` with role ``sender`` or
    ``receiver``) adds actors that have no events.  Native-range and strata
    rows naming unknown actors are dropped and counted in the returned
    :class:`LoadReport`.
    """
    report = LoadReport()
    records = read_events_csv(events_path)
    senders = {r[0] for r in records}
    receivers = {r[1] for r in records}
    if actors_path is not None:
        for role, a in read_pairs_csv(actors_path, "role", "id"):
            if role not in ("sender", "receiver"):
                raise ValidationError(f"actors file: unknown role {role!r} for {a!r}")
            (senders if role == "sender" else receivers).add(a)
    senders, receivers = sorted(senders), sorted(receivers)
    s_set, r_set = set(senders), set(receivers)

    strata = {}
    if strata_path is not None:
        for s, g in read_pairs_csv(strata_path, "sender", "stratum"):
            if s in s_set:
                strata[s] = g
            else:
                report.dropped_strata += 1
    native = []
    if native_path is not None:
        for s, r in read_pairs_csv(native_path, "sender", "receiver"):
            if s in s_set and r in r_set:
                native.append((s, r))
            else:
                report.dropped_native += 1
    if report.dropped_native:
        log.info("dropped %d native-range rows with unknown actors", report.dropped_native)

    sequence = EventSequence.from_records(records, strata, t_start, t_end)
    risk, history = initial_state(senders, receivers, native, strata)
    report.n_events = len(sequence)
    return sequence, risk, history, native, report
