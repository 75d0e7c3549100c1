"""Design columns and penalties for the case-control regression.

Three term kinds are supported:

* ``linear`` -- one unpenalized column holding the covariate difference;
* ``time_varying`` -- a rank-``k`` thin plate regression spline in calendar
  year multiplied by the covariate difference (varying-coefficient term);
* ``random_effect`` -- one +1/-1 indicator column per observed factor level
  with an identity penalty, optionally split into per-stratum blocks.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

TERM_KINDS = ("linear", "time_varying", "random_effect")
MAX_KNOTS = 200


class BasisRankError(ValueError):
    pass


class SpecError(ValueError):
    pass


@dataclass(frozen=True)
class TermSpec:
    """Model term.  ``covariate`` names a numeric column (linear, time_varying)
    or a label column (random_effect)."""

    name: str
    kind: str
    covariate: str
    k: int = 10
    by_stratum: bool = False

    def __post_init__(self):
        if self.kind not in TERM_KINDS:
            raise SpecError(f"term {self.name!r}: unknown kind {self.kind!r}")
        if self.kind == "time_varying" and self.k < 3:
            raise SpecError(f"term {self.name!r}: k must be >= 3")

    @classmethod
    def from_dict(cls, d: Mapping) -> "TermSpec":
        return cls(
            name=d["name"],
            kind=d["kind"],
            covariate=d.get("covariate", d["name"]),
            k=int(d.get("k", 10)),
            by_stratum=bool(d.get("by_stratum", False)),
        )


# ---------------------------------------------------------------------------
# thin plate regression spline in one dimension
# ---------------------------------------------------------------------------


def _tp_kernel(r):
    return np.abs(r) ** 3 / 12.0


def select_knots(years, max_knots: int = MAX_KNOTS) -> np.ndarray:
    u = np.unique(np.asarray(years, dtype=float))
    if u.size > max_knots:
        idx = np.unique(np.round(np.linspace(0, u.size - 1, max_knots)).astype(int))
        u = u[idx]
    return u


class TPRSBasis:
    """Rank-``k`` thin plate regression spline on the unique event years.

    Coefficient order is ``k - 2`` penalized wiggly directions followed by the
    constant and linear null-space directions.  Time is mapped to [0, 1]
    over the knot range before evaluating the kernel.
    """

    null_space_dim = 2

    def __init__(self, years, k: int = 10, max_knots: int = MAX_KNOTS, window=None):
        if k < 3:
            raise BasisRankError("k must be >= 3")
        knots = select_knots(years, max_knots)
        if knots.size < k:
            raise BasisRankError(f"{knots.size} distinct years, need at least k={k}")
        self.k = k
        self.knots = knots
        self.lo, self.hi = float(knots[0]), float(knots[-1])
        # extrapolation is judged against the observation window when known
        self.window = (self.lo, self.hi) if window is None else (float(window[0]), float(window[1]))
        u = self._scale(knots)
        self._u = u
        E = _tp_kernel(u[:, None] - u[None, :])
        vals, vecs = np.linalg.eigh(E)
        order = np.argsort(-np.abs(vals))[:k]
        D, U = vals[order], vecs[:, order]
        T = np.column_stack([np.ones_like(u), u])
        Q, _ = np.linalg.qr(U.T @ T, mode="complete")
        Z = Q[:, 2:]
        self._UZ = U @ Z
        S_w = Z.T @ (D[:, None] * Z)
        S_w = 0.5 * (S_w + S_w.T)
        S = np.zeros((k, k))
        S[: k - 2, : k - 2] = S_w
        self.penalty = S

    def _scale(self, t):
        span = self.hi - self.lo
        return (np.asarray(t, dtype=float) - self.lo) / (span if span > 0 else 1.0)

    def __call__(self, t) -> np.ndarray:
        u = np.atleast_1d(self._scale(t))
        wiggly = _tp_kernel(u[:, None] - self._u[None, :]) @ self._UZ
        return np.column_stack([wiggly, np.ones_like(u), u])

    def in_window(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        return (t >= self.window[0]) & (t <= self.window[1])


def tprs_basis(event_years, k: int = 10) -> TPRSBasis:
    return TPRSBasis(event_years, k)


# ---------------------------------------------------------------------------
# term blocks
# ---------------------------------------------------------------------------


@dataclass
class TermBlock:
    """Columns for one term plus its penalties.

    ``penalties`` holds ``(label, local column slice, S)`` triples; a
    heteroscedastic random effect has one triple per stratum.
    """

    name: str
    kind: str
    columns: np.ndarray
    penalties: list = field(default_factory=list)
    null_space_dim: int = 0
    levels: list | None = None
    level_strata: list | None = None
    basis: TPRSBasis | None = None
    covariate: str | None = None

    @property
    def n_columns(self) -> int:
        return self.columns.shape[1]


def _level_order(levels, level_strata):
    if level_strata is None:
        return sorted(levels), None
    pairs = sorted(zip(level_strata, levels))
    return [lv for _, lv in pairs], [g for g, _ in pairs]


def random_effect_block(labels_case, labels_control, name: str = "re",
                        levels: Sequence[str] | None = None,
                        level_strata: Mapping[str, str] | None = None) -> TermBlock:
    """Indicator block: +1 at the case level, -1 at the control level.

    ``levels`` defaults to the sorted observed levels; labels outside it get
    no column (coefficient 0).  With ``level_strata`` the levels are grouped
    by stratum and each group gets its own identity penalty.
    """
    labels_case = np.asarray(labels_case, dtype=object)
    labels_control = np.asarray(labels_control, dtype=object)
    if levels is None:
        levels = set(labels_case.tolist()) | set(labels_control.tolist())
        levels.discard(None)
    strata = None
    if level_strata is not None:
        strata = [level_strata[lv] for lv in levels]
    levels, strata = _level_order(list(levels), strata)
    pos = {lv: q for q, lv in enumerate(levels)}
    n, q = labels_case.size, len(levels)
    X = np.zeros((n, q))
    rows = np.arange(n)
    ci = np.array([pos.get(lv, -1) for lv in labels_case], dtype=int)
    ki = np.array([pos.get(lv, -1) for lv in labels_control], dtype=int)
    ok = ci >= 0
    np.add.at(X, (rows[ok], ci[ok]), 1.0)
    ok = ki >= 0
    np.add.at(X, (rows[ok], ki[ok]), -1.0)

    penalties = []
    if strata is None:
        if q:
            penalties.append((name, slice(0, q), np.eye(q)))
    else:
        start = 0
        for g in sorted(set(strata)):
            size = strata.count(g)
            penalties.append((f"{name}[{g}]", slice(start, start + size), np.eye(size)))
            start += size
    return TermBlock(name, "random_effect", X, penalties, 0, levels, strata)


def _scale_penalty(S: np.ndarray, X: np.ndarray) -> np.ndarray:
    s_norm = np.abs(S).sum(axis=0).max()
    x_norm = np.abs(X).sum(axis=0).max() if X.size else 1.0
    if s_norm == 0 or x_norm == 0:
        return S
    return S * (x_norm**2 / X.shape[0]) / s_norm if X.shape[0] else S


@dataclass
class PenaltyBlock:
    label: str
    term: str
    cols: slice
    S: np.ndarray
    rank: int
    is_random_effect: bool


@dataclass
class DesignAssembly:
    X: np.ndarray
    penalty_blocks: list
    weights: np.ndarray
    terms: dict
    blocks: list
    column_names: list
    n_events: int

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def penalty_matrix(self, lam) -> np.ndarray:
        S = np.zeros((self.d, self.d))
        for lj, pb in zip(lam, self.penalty_blocks):
            S[pb.cols, pb.cols] += lj * pb.S
        return S

    def unpenalized_columns(self) -> np.ndarray:
        pen = np.zeros(self.d, dtype=bool)
        for pb in self.penalty_blocks:
            idx = np.arange(self.d)[pb.cols]
            sub = np.abs(pb.S).sum(axis=0) > 0
            pen[idx[sub]] = True
        return ~pen

    def rows_for_dyads(self, x: np.ndarray, labels: Mapping[str, Sequence], years,
                       covariate_names: Sequence[str]) -> np.ndarray:
        """Design rows for single dyads with absolute covariates ``x`` (n, p).

        Random-effect columns get +1 at the dyad's level; unknown levels give
        an all-zero block.
        """
        x = np.atleast_2d(np.asarray(x, dtype=float))
        n = x.shape[0]
        years = np.asarray(years, dtype=float)
        out = np.zeros((n, self.d))
        for block in self.blocks:
            cols = self.terms[block.name]
            if block.kind == "linear":
                out[:, cols] = x[:, covariate_names.index(block.covariate)][:, None]
            elif block.kind == "time_varying":
                xc = x[:, covariate_names.index(block.covariate)]
                out[:, cols] = block.basis(years) * xc[:, None]
            else:
                pos = {lv: q for q, lv in enumerate(block.levels)}
                idx = np.array([pos.get(lv, -1) for lv in labels[block.covariate]], dtype=int)
                ok = idx >= 0
                sub = np.zeros((n, block.n_columns))
                sub[np.flatnonzero(ok), idx[ok]] = 1.0
                out[:, cols] = sub
        return out

    def export(self, path) -> None:
        """Write ``X`` and penalties to ``path`` (.npz) with a JSON header."""
        path = Path(path)
        arrays = {"X": self.X, "weights": self.weights}
        header = {"columns": self.column_names, "penalties": []}
        for q, pb in enumerate(self.penalty_blocks):
            arrays[f"S{q}"] = pb.S
            header["penalties"].append(
                {"label": pb.label, "term": pb.term, "start": pb.cols.start,
                 "stop": pb.cols.stop, "rank": pb.rank}
            )
        np.savez(path.with_suffix(".npz"), **arrays)
        path.with_suffix(".json").write_text(json.dumps(header, indent=2))


def _level_strata_map(dataset, factor: str) -> dict:
    mapping: dict = {}
    for labels, strata in ((dataset.case_labels[factor], dataset.stratum),
                           (dataset.control_labels[factor], dataset.control_stratum)):
        for lv, g in zip(labels, strata):
            if mapping.setdefault(lv, g) != g:
                raise SpecError(
                    f"level {lv!r} of {factor!r} occurs in strata {mapping[lv]!r} and {g!r}; "
                    "by_stratum needs each level in one stratum"
                )
    return mapping


def assemble_design(dataset, term_specs: Sequence[TermSpec],
                    knot_years=None) -> DesignAssembly:
    """Stack term blocks into the penalized design (no intercept)."""
    if not term_specs:
        raise SpecError("at least one term is required")
    names = [t.name for t in term_specs]
    if len(set(names)) != len(names):
        raise SpecError("duplicate term names")
    x_diff = dataset.x_diff
    years = np.asarray(dataset.year, dtype=float)
    meta = getattr(dataset, "meta", None) or {}
    window = None
    if meta.get("t_start") is not None and meta.get("t_end") is not None:
        window = (meta["t_start"], meta["t_end"])
    blocks = []
    for t in term_specs:
        if t.kind in ("linear", "time_varying"):
            if t.covariate not in dataset.covariate_names:
                raise SpecError(f"term {t.name!r}: covariate {t.covariate!r} not in dataset")
            xc = x_diff[:, dataset.covariate_names.index(t.covariate)]
            if t.kind == "linear":
                blocks.append(TermBlock(t.name, "linear", xc[:, None], [], 1, covariate=t.covariate))
            else:
                basis = TPRSBasis(years if knot_years is None else knot_years, t.k, window=window)
                cols = basis(years) * xc[:, None]
                S = _scale_penalty(basis.penalty, cols)
                blocks.append(TermBlock(t.name, "time_varying", cols,
                                        [(t.name, slice(0, t.k), S)], 2,
                                        basis=basis, covariate=t.covariate))
        else:
            if t.covariate not in dataset.factor_names:
                raise SpecError(f"term {t.name!r}: label column {t.covariate!r} not in dataset")
            strata_map = _level_strata_map(dataset, t.covariate) if t.by_stratum else None
            b = random_effect_block(dataset.case_labels[t.covariate],
                                    dataset.control_labels[t.covariate],
                                    name=t.name, level_strata=strata_map)
            b.covariate = t.covariate
            blocks.append(b)

    X = np.hstack([b.columns for b in blocks]) if blocks else np.empty((dataset.n_rows, 0))
    terms, penalty_blocks, column_names = {}, [], []
    start = 0
    for b in blocks:
        q = b.n_columns
        terms[b.name] = slice(start, start + q)
        for label, local, S in b.penalties:
            cols = slice(start + local.start, start + local.stop)
            rank = int(np.linalg.matrix_rank(S)) if S.size else 0
            penalty_blocks.append(PenaltyBlock(label, b.name, cols, S, rank,
                                               b.kind == "random_effect"))
        if b.kind == "linear":
            column_names.append(b.name)
        elif b.kind == "time_varying":
            column_names += [f"{b.name}.{c}" for c in range(q)]
        else:
            column_names += [f"{b.name}[{lv}]" for lv in b.levels]
        start += q
    return DesignAssembly(X, penalty_blocks, np.asarray(dataset.weight, dtype=float),
                          terms, blocks, column_names, dataset.n_events)
