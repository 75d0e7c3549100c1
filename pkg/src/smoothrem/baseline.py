"""Breslow-type cumulative baseline hazard from nested case-control data.

Each event contributes ``1 / sum_j exp(gamma' v_j) w_j`` over its sampled
set, where the weight ``w_j`` inflates the sampled sum to the whole risk
set.  Under uniform matched sampling every member gets ``n_g(t_k) / m``
(matched estimator) or ``n(t_k) / m`` (pooled estimator).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln


@dataclass
class SampledSet:
    event_index: int
    year: int
    stratum: str
    eta: np.ndarray          # case first
    member_strata: np.ndarray
    n_at_risk: int
    n_stratum: int
    receivers: np.ndarray


def sampled_sets(fit, dataset) -> list[SampledSet]:
    """Regroup dataset rows into per-event sampled sets with fitted linear predictors."""
    ev = np.asarray(dataset.event_index)
    if ev.size == 0:
        return []
    years = np.asarray(dataset.year)
    labels_case = {f: dataset.case_labels[f] for f in dataset.factor_names}
    labels_ctrl = {f: dataset.control_labels[f] for f in dataset.factor_names}
    eta_case = fit.linear_predictor(dataset.x_case, labels_case, years)
    eta_ctrl = fit.linear_predictor(dataset.x_control, labels_ctrl, years)
    starts = np.flatnonzero(np.r_[True, ev[1:] != ev[:-1]])
    ends = np.r_[starts[1:], ev.size]
    out = []
    for a, b in zip(starts, ends):
        out.append(SampledSet(
            event_index=int(ev[a]),
            year=int(years[a]),
            stratum=dataset.stratum[a],
            eta=np.r_[eta_case[a], eta_ctrl[a:b]],
            member_strata=np.r_[[dataset.stratum[a]], dataset.control_stratum[a:b]],
            n_at_risk=int(dataset.n_at_risk[a]),
            n_stratum=int(dataset.n_stratum[a]),
            receivers=np.r_[[dataset.case_receiver[a]], dataset.control_receiver[a:b]],
        ))
    return out


@dataclass
class BaselineEstimate:
    stratum: str
    years: np.ndarray
    increments: np.ndarray
    cumulative: np.ndarray
    mode: str
    event_index: np.ndarray

    def __call__(self, t) -> np.ndarray:
        """Right-continuous step function, 0 before the first event."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        k = np.searchsorted(self.years, t, side="right")
        cum = np.r_[0.0, self.cumulative]
        return cum[k]

    def year_end(self):
        """Unique years with the cumulative value at the end of each year."""
        if self.years.size == 0:
            return self.years, self.cumulative, self.increments
        yrs, last = np.unique(self.years[::-1], return_index=True)
        last = self.years.size - 1 - last
        inc = np.diff(np.r_[0.0, self.cumulative[last]])
        return yrs, self.cumulative[last], inc


def _exp_checked(eta: np.ndarray, event_index: int) -> np.ndarray:
    with np.errstate(over="ignore"):
        r = np.exp(eta)
    if not np.all(np.isfinite(r)):
        raise OverflowError(f"non-finite rate exp(gamma'v) in the sampled set of event {event_index}")
    return r


def _increment(s: SampledSet, weights: np.ndarray) -> float:
    """``1 / sum_j exp(eta_j) w_j`` for one sampled set."""
    return 1.0 / float(np.sum(_exp_checked(s.eta, s.event_index) * weights))


def _check_counts(s: SampledSet, attr: str) -> int:
    n = getattr(s, attr)
    if n is None or n <= 0:
        raise ValueError(f"event {s.event_index}: missing at-risk count {attr}")
    return n


def _estimate(stratum, sets, increments, mode) -> BaselineEstimate:
    inc = np.asarray(increments, dtype=float)
    return BaselineEstimate(
        stratum=stratum,
        years=np.array([s.year for s in sets], dtype=int),
        increments=inc,
        cumulative=np.cumsum(inc),
        mode=mode,
        event_index=np.array([s.event_index for s in sets], dtype=int),
    )


def breslow_matched(fit, dataset) -> dict:
    """Per-stratum cumulative baseline from matched sampled sets."""
    sets = sampled_sets(fit, dataset)
    by_stratum: dict = {}
    for s in sets:
        m = s.eta.size
        n_g = _check_counts(s, "n_stratum")
        inc = _increment(s, np.full(m, n_g / m))
        by_stratum.setdefault(s.stratum, ([], []))
        by_stratum[s.stratum][0].append(s)
        by_stratum[s.stratum][1].append(inc)
    return {g: _estimate(g, ss, inc, "matched") for g, (ss, inc) in sorted(by_stratum.items())}


def _log_pi(n_relevant: int, m: int) -> float:
    """log of 1 / C(n - 1, m - 1), the uniform sampled-set probability."""
    return -(gammaln(n_relevant) - gammaln(m) - gammaln(n_relevant - m + 1))


def inclusion_weights(s: SampledSet, stratum_counts: dict, restrict: bool, m: int) -> np.ndarray:
    """``w_j = pi(sr|j) / (n^-1 sum_l pi(sr|l))`` for each member of the sampled set.

    With ``restrict`` a member's sampling probability is that of the
    within-stratum design, and zero if the set crosses its stratum.
    """
    if restrict:
        log_pi = np.empty(m)
        same = np.all(s.member_strata == s.member_strata[0])
        for j, g in enumerate(s.member_strata):
            log_pi[j] = _log_pi(stratum_counts[g], m) if same else -np.inf
    else:
        log_pi = np.full(m, _log_pi(s.n_at_risk, m))
    if not np.isfinite(log_pi).any():
        raise ValueError(f"event {s.event_index}: sampled set has zero probability")
    ref = log_pi.max()
    pi = np.exp(log_pi - ref)
    # equal probabilities give exactly n / m, matching the matched estimator
    return pi * s.n_at_risk / pi.sum()


def breslow_pooled(fit, dataset, restrict: bool = True) -> BaselineEstimate:
    """One cumulative baseline across strata using the general weight formula."""
    sets = sampled_sets(fit, dataset)
    increments = []
    for s in sets:
        m = s.eta.size
        _check_counts(s, "n_at_risk")
        n_g = _check_counts(s, "n_stratum")
        counts = {s.stratum: n_g}
        if restrict and np.any(s.member_strata != s.stratum):
            raise ValueError(
                f"event {s.event_index}: sampled set crosses strata; the stratum-restricted "
                "pooled estimator needs matched sampling"
            )
        w = inclusion_weights(s, counts, restrict, m)
        increments.append(_increment(s, w))
    return _estimate("pooled", sets, increments, "pooled")


def write_baseline_csv(path, estimates) -> None:
    """Year-end steps as ``stratum,year,increment,cumulative,mode``."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["stratum", "year", "increment", "cumulative", "mode"])
        for est in estimates:
            yrs, cum, inc = est.year_end()
            for y, i, c in zip(yrs, inc, cum):
                w.writerow([est.stratum, int(y), repr(float(i)), repr(float(c)), est.mode])
