"""Endogenous dyadic covariates and random-effect labels evaluated from the history.

Every evaluation at ``year`` uses only arrivals dated strictly before
``year`` (native range included), so values are fixed for a whole calendar
year and never see the year's own events.
"""

from __future__ import annotations

import bisect
import csv
from collections import Counter, OrderedDict
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .events import ActorIndex, History, ValidationError

NOVELTY = "Novelty"
RARE = "Rare interaction"
INDEPENDENT = "independent"

NUMERIC_KINDS = {
    "static_dyadic",
    "sum_over_invaded",
    "min_over_invaded",
    "min_abs_diff",
    "group_indicator",
    "receiver_attribute",
}
LABEL_KINDS = {"sender_label", "receiver_label", "last_arrival"}
TRANSFORMS = {"none", "log", "log1p"}

_ALIASES = {
    "static_dyadic_table": "static_dyadic",
    "min_over_invaded_distance_table": "min_over_invaded",
    "min_abs_diff_over_invaded": "min_abs_diff",
    "indicator_from_group_table": "group_indicator",
    "last_arrival_interaction": "last_arrival",
}


class MissingOrigin(ValueError):
    """The sender occupies no receiver before the query year."""


def _norm_kind(kind: str) -> str:
    k = kind.replace("-", "_").replace("(", "_").replace(")", "").strip("_").lower()
    return _ALIASES.get(k, k)


@dataclass(frozen=True)
class CovariateSpec:
    """One covariate column or random-effect label column.

    ``table`` names an entry of :class:`CovariateTables`; ``offset`` is added
    before a ``log`` transform.
    """

    name: str
    kind: str
    table: str | None = None
    transform: str = "none"
    offset: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "kind", _norm_kind(self.kind))
        if self.kind not in NUMERIC_KINDS | LABEL_KINDS:
            raise ValidationError(f"covariate {self.name!r}: unknown kind {self.kind!r}")
        if self.transform not in TRANSFORMS:
            raise ValidationError(f"covariate {self.name!r}: unknown transform {self.transform!r}")
        if self.kind in NUMERIC_KINDS and self.table is None:
            raise ValidationError(f"covariate {self.name!r} of kind {self.kind} needs a table")

    @property
    def is_label(self) -> bool:
        return self.kind in LABEL_KINDS

    @classmethod
    def from_dict(cls, d: Mapping) -> "CovariateSpec":
        return cls(
            name=d["name"],
            kind=d["kind"],
            table=d.get("table"),
            transform=d.get("transform", "none"),
            offset=float(d.get("offset", 0.0)),
        )


def apply_transform(values, transform: str, offset: float = 0.0):
    values = np.asarray(values, dtype=float)
    if transform == "none":
        return values
    if transform == "log1p":
        return np.log1p(values)
    shifted = values + offset
    if np.any(shifted <= 0):
        raise ValueError("log transform of a non-positive value; use log1p or an offset")
    return np.log(shifted)


# ---------------------------------------------------------------------------
# tables
# ---------------------------------------------------------------------------


class YearTable:
    """Keyed yearly values with carry-forward lookup.

    The value at ``year`` is the one recorded at the latest year not greater
    than ``year``; keys never recorded, or queried before their first
    record, give ``default``.
    """

    def __init__(self, default: float = 0.0):
        self.default = default
        self._years: dict = {}
        self._values: dict = {}

    def set(self, key, year, value: float) -> None:
        ys = self._years.setdefault(key, [])
        vs = self._values.setdefault(key, [])
        k = bisect.bisect_left(ys, year)
        if k < len(ys) and ys[k] == year:
            vs[k] = float(value)
        else:
            ys.insert(k, year)
            vs.insert(k, float(value))

    def get(self, key, year) -> float:
        ys = self._years.get(key)
        if not ys:
            return self.default
        k = bisect.bisect_right(ys, year)
        return self._values[key][k - 1] if k > 0 else self.default

    def keys(self):
        return self._years.keys()


@dataclass
class CovariateTables:
    """Named input tables, keyed by actor id.

    * ``distances[name]``: receiver x receiver matrix (symmetric, zero diagonal)
    * ``receiver_attributes[name]``: :class:`YearTable` keyed by receiver, or a
      static mapping receiver -> value
    * ``groups[name]``: receiver -> group label (``"independent"`` allowed)
    * ``pair_tables[name]``: :class:`YearTable` keyed by ``(a, b)``; for
      ``static_dyadic`` the key is ``(sender, receiver)``, for
      ``sum_over_invaded`` it is an unordered receiver pair
    """

    distances: dict = field(default_factory=dict)
    receiver_attributes: dict = field(default_factory=dict)
    groups: dict = field(default_factory=dict)
    pair_tables: dict = field(default_factory=dict)


def _attr_vector(table, receivers: Sequence[str], year: int) -> np.ndarray:
    if isinstance(table, YearTable):
        return np.array([table.get(r, year) for r in receivers])
    return np.array([float(table[r]) for r in receivers])


def _distance_matrix(table, index: ActorIndex) -> np.ndarray:
    if isinstance(table, np.ndarray):
        D = np.asarray(table, dtype=float)
    else:
        n = index.n_receivers
        D = np.zeros((n, n))
        for (a, b), v in table.items():
            if a not in index.receiver_pos or b not in index.receiver_pos:
                continue
            ia, ib = index.receiver_pos[a], index.receiver_pos[b]
            D[ia, ib] = D[ib, ia] = v
    if D.shape != (index.n_receivers,) * 2:
        raise ValidationError(f"distance table shape {D.shape} does not match receivers")
    if not np.allclose(D, D.T) or np.any(D < 0) or np.any(np.diag(D) != 0):
        raise ValidationError("distance table must be symmetric, non-negative, zero diagonal")
    return D


# ---------------------------------------------------------------------------
# single-dyad operations
# ---------------------------------------------------------------------------


def eval_min_over_invaded(sender, receiver, year, distance, history: History,
                          transform="none", offset=0.0) -> float:
    """Transformed distance from ``receiver`` to the nearest receiver occupied before ``year``."""
    index = history.index
    i, j = index.sender_pos[sender], index.receiver_pos[receiver]
    D = _distance_matrix(distance, index)
    occ = history.occupied(i, year)
    if not occ.any():
        raise MissingOrigin(f"sender {sender!r} occupies no receiver before {year}")
    return float(apply_transform(D[occ, j].min(), transform, offset))


def eval_min_abs_diff(sender, receiver, year, attribute, history: History,
                      transform="none", offset=0.0) -> float:
    index = history.index
    i, j = index.sender_pos[sender], index.receiver_pos[receiver]
    a = _attr_vector(attribute, index.receivers, year)
    occ = history.occupied(i, year)
    if not occ.any():
        raise MissingOrigin(f"sender {sender!r} occupies no receiver before {year}")
    return float(apply_transform(np.abs(a[occ] - a[j]).min(), transform, offset))


def eval_group_indicator(sender, receiver, year, groups: Mapping[str, str], history: History) -> int:
    index = history.index
    g = groups.get(receiver, INDEPENDENT)
    if g == INDEPENDENT:
        return 0
    i = index.sender_pos[sender]
    occ = history.occupied(i, year)
    for j in np.flatnonzero(occ):
        r = index.receivers[j]
        if r != receiver and groups.get(r, INDEPENDENT) == g:
            return 1
    return 0


def last_arrival_label(sender, receiver, year, history: History) -> str:
    """``"sender.X"`` for the latest arrival X in ``receiver`` before ``year``, else Novelty."""
    index = history.index
    last = history.last_arrival(index.receiver_pos[receiver], year)
    if last is None:
        return NOVELTY
    return f"{sender}.{index.senders[last]}"


def relabel_rare(labels: Sequence[str], keep=(NOVELTY,)) -> list[str]:
    """Map levels occurring exactly once to ``"Rare interaction"``.

    Levels in ``keep`` are reserved categories and left alone.
    """
    counts = Counter(labels)
    return [RARE if counts[x] == 1 and x not in keep else x for x in labels]


# ---------------------------------------------------------------------------
# engine
# ---------------------------------------------------------------------------


class CovariateEngine:
    """Evaluates all covariate columns for dyads at a given year.

    Numeric columns come back as float arrays (one column per numeric spec,
    in spec order); label columns as lists of strings.  Whole-network
    matrices are cached per year.
    """

    def __init__(self, specs: Sequence[CovariateSpec], tables: CovariateTables | None,
                 history: History, cache_years: int = 2):
        self.specs = list(specs)
        self.tables = tables or CovariateTables()
        self.history = history
        self.index = history.index
        self.numeric = [s for s in self.specs if not s.is_label]
        self.factors = [s for s in self.specs if s.is_label]
        self._cache: OrderedDict = OrderedDict()
        self._cache_years = cache_years
        self._dist = {}
        self._groups = {}
        for s in self.numeric:
            self._check_table(s)

    @property
    def names(self) -> list[str]:
        return [s.name for s in self.numeric]

    @property
    def factor_names(self) -> list[str]:
        return [s.name for s in self.factors]

    def _check_table(self, spec: CovariateSpec) -> None:
        t = self.tables
        kind = spec.kind
        if kind == "min_over_invaded":
            if spec.table not in t.distances:
                raise ValidationError(f"missing distance table {spec.table!r}")
            self._dist[spec.table] = _distance_matrix(t.distances[spec.table], self.index)
        elif kind in ("min_abs_diff", "receiver_attribute"):
            if spec.table not in t.receiver_attributes:
                raise ValidationError(f"missing receiver attribute table {spec.table!r}")
        elif kind == "group_indicator":
            if spec.table not in t.groups:
                raise ValidationError(f"missing group table {spec.table!r}")
            g = t.groups[spec.table]
            labels = [g.get(r, INDEPENDENT) for r in self.index.receivers]
            uniq = {x: k for k, x in enumerate(sorted(set(labels) - {INDEPENDENT}))}
            self._groups[spec.table] = np.array([uniq.get(x, -1) for x in labels])
        elif kind in ("static_dyadic", "sum_over_invaded"):
            if spec.table not in t.pair_tables:
                raise ValidationError(f"missing pair table {spec.table!r}")

    def invalidate(self) -> None:
        self._cache.clear()

    # -- per-year dense inputs -------------------------------------------

    def _pair_matrix(self, spec: CovariateSpec, year: int) -> np.ndarray:
        table = self.tables.pair_tables[spec.table]
        if spec.kind == "static_dyadic":
            M = np.zeros((self.index.n_senders, self.index.n_receivers))
            pos_a, pos_b = self.index.sender_pos, self.index.receiver_pos
        else:
            M = np.zeros((self.index.n_receivers, self.index.n_receivers))
            pos_a = pos_b = self.index.receiver_pos
        for a, b in table.keys():
            if a in pos_a and b in pos_b:
                v = table.get((a, b), year)
                M[pos_a[a], pos_b[b]] = v
                if spec.kind == "sum_over_invaded":
                    M[pos_b[b], pos_a[a]] = v
        return M

    def _column(self, spec: CovariateSpec, s_idx: np.ndarray, r_idx: np.ndarray,
                occ: np.ndarray, year: int) -> np.ndarray:
        kind = spec.kind
        if kind == "min_over_invaded":
            D = self._dist[spec.table]
            raw = np.where(occ, D[r_idx], np.inf).min(axis=1)
            self._require_origin(raw, s_idx, year)
        elif kind == "min_abs_diff":
            a = _attr_vector(self.tables.receiver_attributes[spec.table], self.index.receivers, year)
            raw = np.where(occ, np.abs(a[None, :] - a[r_idx][:, None]), np.inf).min(axis=1)
            self._require_origin(raw, s_idx, year)
        elif kind == "group_indicator":
            g = self._groups[spec.table]
            same = (g[None, :] == g[r_idx][:, None]) & (g[r_idx][:, None] >= 0)
            same[np.arange(r_idx.size), r_idx] = False
            raw = (occ & same).any(axis=1).astype(float)
        elif kind == "receiver_attribute":
            a = _attr_vector(self.tables.receiver_attributes[spec.table], self.index.receivers, year)
            raw = a[r_idx]
        elif kind == "sum_over_invaded":
            P = self._pair_matrix(spec, year)
            raw = (occ * P[r_idx]).sum(axis=1)
        else:  # static_dyadic
            raw = self._pair_matrix(spec, year)[s_idx, r_idx]
        return apply_transform(raw, spec.transform, spec.offset)

    def _require_origin(self, raw, s_idx, year):
        bad = ~np.isfinite(raw)
        if bad.any():
            s = self.index.senders[int(np.asarray(s_idx)[np.argmax(bad)])]
            raise MissingOrigin(f"sender {s!r} occupies no receiver before {year}")

    # -- public evaluation ------------------------------------------------

    def values_many(self, s_idx, r_idx, year: int) -> np.ndarray:
        """Numeric covariates for dyads ``(s_idx[k], r_idx[k])`` at ``year``; shape (n, p)."""
        s_idx = np.atleast_1d(np.asarray(s_idx, dtype=int))
        r_idx = np.atleast_1d(np.asarray(r_idx, dtype=int))
        out = np.empty((s_idx.size, len(self.numeric)))
        if not self.numeric:
            return out
        occ = self.history.first_year[s_idx] < year
        for c, spec in enumerate(self.numeric):
            out[:, c] = self._column(spec, s_idx, r_idx, occ, year)
        return out

    def values(self, sender: str, receiver: str, year: int) -> np.ndarray:
        i, j = self.index.sender_pos[sender], self.index.receiver_pos[receiver]
        return self.values_many([i], [j], year)[0]

    def matrix(self, year: int, chunk: int = 4_000_000) -> np.ndarray:
        """All dyads at ``year`` as an (n_senders, n_receivers, p) array, cached.

        Senders without origin get NaN for the min-type columns.
        """
        if year in self._cache:
            self._cache.move_to_end(year)
            return self._cache[year]
        n_s, n_r = self.index.n_senders, self.index.n_receivers
        out = np.empty((n_s, n_r, len(self.numeric)))
        step = max(1, chunk // max(1, n_r * n_r))
        all_r = np.tile(np.arange(n_r), step)
        for lo in range(0, n_s, step):
            hi = min(n_s, lo + step)
            s_idx = np.repeat(np.arange(lo, hi), n_r)
            r_idx = all_r[: s_idx.size]
            occ = self.history.first_year[s_idx] < year
            for c, spec in enumerate(self.numeric):
                if spec.kind in ("min_over_invaded", "min_abs_diff"):
                    col = self._column_lenient(spec, s_idx, r_idx, occ, year)
                else:
                    col = self._column(spec, s_idx, r_idx, occ, year)
                out[lo:hi, :, c] = col.reshape(hi - lo, n_r)
        self._cache[year] = out
        if len(self._cache) > self._cache_years:
            self._cache.popitem(last=False)
        return out

    def _column_lenient(self, spec, s_idx, r_idx, occ, year):
        has = occ.any(axis=1)
        col = np.full(s_idx.size, np.nan)
        if has.any():
            col[has] = self._column(spec, s_idx[has], r_idx[has], occ[has], year)
        return col

    def labels_many(self, s_idx, r_idx, year: int) -> list[list[str]]:
        """Label columns: one list per factor spec."""
        out = []
        senders, receivers = self.index.senders, self.index.receivers
        for spec in self.factors:
            if spec.kind == "sender_label":
                col = [senders[i] for i in s_idx]
            elif spec.kind == "receiver_label":
                col = [receivers[j] for j in r_idx]
            else:
                col = []
                for i, j in zip(s_idx, r_idx):
                    last = self.history.last_arrival(int(j), year)
                    col.append(NOVELTY if last is None else f"{senders[i]}.{senders[last]}")
            out.append(col)
        return out


# ---------------------------------------------------------------------------
# CSV readers
# ---------------------------------------------------------------------------


def _rows(path, cols):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not set(cols) <= set(reader.fieldnames):
            raise ValidationError(f"{path}: expected columns {','.join(cols)}")
        return list(reader)


def read_distance_csv(path) -> dict:
    return {(r["region_a"], r["region_b"]): float(r["value"])
            for r in _rows(path, ["region_a", "region_b", "value"])}


def read_attribute_csv(path) -> YearTable:
    t = YearTable(default=np.nan)
    for r in _rows(path, ["region", "year", "value"]):
        t.set(r["region"], int(r["year"]), float(r["value"]))
    return t


def read_group_csv(path) -> dict:
    return {r["region"]: r["group"] for r in _rows(path, ["region", "group"])}


def read_pair_csv(path) -> YearTable:
    t = YearTable(default=0.0)
    for r in _rows(path, ["a", "b", "year", "value"]):
        t.set((r["a"], r["b"]), int(r["year"]), float(r["value"]))
    return t
