"""Receiver-stratified martingale-residual goodness of fit.

For receiver ``r0`` the terminal statistic is

    G = sum_k [ 1{r_k = r0} - phi_k ],   phi_k = Phi_k(r0) / S_k,

where ``S_k`` sums ``exp(gamma' v) pi`` over the sampled set of event ``k``
and ``Phi_k(r0)`` restricts that sum to members with receiver ``r0``.  Its
variance is estimated by ``sum_k phi_k (1 - phi_k)``.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .baseline import sampled_sets

MIN_EVENTS_FOR_SUMMARY = 5


def _phi_by_receiver(s) -> dict:
    eta = s.eta - s.eta.max()
    # uniform designs give every member the same pi; it cancels
    p = np.exp(eta)
    p = p / p.sum()
    out: dict = {}
    for r, pj in zip(s.receivers, p):
        out[r] = out.get(r, 0.0) + pj
    return out


def _accumulate(sets):
    G, V, events = {}, {}, {}
    for s in sets:
        case_r = s.receivers[0]
        events[case_r] = events.get(case_r, 0) + 1
        for r, phi in _phi_by_receiver(s).items():
            G[r] = G.get(r, 0.0) + (1.0 if r == case_r else 0.0) - phi
            V[r] = V.get(r, 0.0) + phi * (1.0 - phi)
    return G, V, events


def martingale_gof_process(fit, dataset, receiver) -> tuple[float, float]:
    """Terminal statistic G and its variance estimate for one receiver."""
    G, V, _ = _accumulate(sampled_sets(fit, dataset))
    return G.get(receiver, 0.0), V.get(receiver, 0.0)


def standardized_statistic(G: float, variance: float) -> float:
    """G / sqrt(variance); NaN (flagged by callers) when the variance is zero."""
    if variance <= 0:
        return float("nan")
    return G / np.sqrt(variance)


def fdr_adjust(pvalues) -> np.ndarray:
    """Benjamini-Hochberg adjusted p-values."""
    p = np.asarray(pvalues, dtype=float)
    if p.size == 0:
        return p
    if np.any((p < 0) | (p > 1)):
        raise ValueError("p-values must lie in [0, 1]")
    return stats.false_discovery_control(p, method="bh")


@dataclass
class GofRow:
    receiver: str
    events: int
    G: float
    variance: float
    z: float
    p: float
    q: float
    flag: str


@dataclass
class GofReport:
    rows: list
    ks_distance: float
    ks_pvalue: float
    n_summary: int
    summary: dict = field(default_factory=dict)

    def z_values(self, min_events: int = MIN_EVENTS_FOR_SUMMARY) -> np.ndarray:
        return np.array([r.z for r in self.rows if r.flag == "" and r.events >= min_events])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["receiver", "events", "G", "variance", "z", "p", "q", "flag"])
            for r in self.rows:
                w.writerow([r.receiver, r.events, repr(r.G), repr(r.variance), repr(r.z),
                            repr(r.p), repr(r.q), r.flag])

    def summary_json(self, path=None) -> str:
        text = json.dumps(self.summary, indent=2, sort_keys=True)
        if path is not None:
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(text)
        return text


def gof_report(fit, dataset, receivers=None, alpha: float = 0.05,
               min_events: int = MIN_EVENTS_FOR_SUMMARY) -> GofReport:
    """Statistics for every receiver, BH-adjusted, plus a KS summary of the z's."""
    G, V, events = _accumulate(sampled_sets(fit, dataset))
    if receivers is None:
        receivers = sorted(set(G) | set(events))
    rows = []
    for r in receivers:
        g, v = G.get(r, 0.0), V.get(r, 0.0)
        flag = "" if v > 0 else "zero_variance"
        z = standardized_statistic(g, v)
        p = float(2 * stats.norm.sf(abs(z))) if flag == "" else float("nan")
        rows.append(GofRow(str(r), int(events.get(r, 0)), float(g), float(v), float(z), p,
                           float("nan"), flag))
    tested = [k for k, row in enumerate(rows) if row.flag == ""]
    if tested:
        q = fdr_adjust([rows[k].p for k in tested])
        for k, qk in zip(tested, q):
            rows[k].q = float(qk)
    z_sum = np.array([r.z for r in rows if r.flag == "" and r.events >= min_events])
    if z_sum.size:
        ks = stats.kstest(z_sum, "norm")
        ks_d, ks_p = float(ks.statistic), float(ks.pvalue)
    else:
        ks_d, ks_p = float("nan"), float("nan")
    summary = {
        "ks_distance": ks_d,
        "ks_pvalue": ks_p,
        "n_receivers": len(rows),
        "n_in_summary": int(z_sum.size),
        "rejections_raw": int(sum(1 for r in rows if r.flag == "" and r.p < alpha)),
        "rejections_fdr": int(sum(1 for r in rows if r.flag == "" and r.q < alpha)),
        "alpha": alpha,
        "min_events": min_events,
    }
    return GofReport(rows, ks_d, ks_p, int(z_sum.size), summary)
