"""Replication harnesses shared by the acceptance suite and ``scripts/``.

Each study simulates event sequences from a known truth, runs the
sampling/fit pipeline and returns one record per replication; summary
helpers reduce the records to the quantities checked by the acceptance
criteria.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import stats

from .baseline import breslow_matched
from .basis import TermSpec
from .covariates import CovariateEngine
from .fit import evaluate_tv_effect, fit_smooth_rem
from .gof import gof_report
from .sampling import CaseControlDataset, build_case_control_dataset
from .simulator import StudyConfig, default_tv_curve, replication_seeds, simulate_sequence


@dataclass
class Replication:
    seed: int
    n_events: int
    seconds: float
    values: dict = field(default_factory=dict)


class _Pipeline:
    """World, truth and initial state reused across replications."""

    def __init__(self, study: StudyConfig, world_kw=None, **truth_kw):
        self.study = study
        self.world = study.world(**(world_kw or {}))
        self.truth = study.truth(self.world, **truth_kw)
        self.risk, self.history = self.world.initial_state()
        self.engine = CovariateEngine(self.world.covariate_specs, self.world.tables, self.history)

    def replicate(self, seed: int):
        rep = simulate_sequence(self.truth, self.risk, self.history, seed, return_replication=True)
        ds = build_case_control_dataset(rep.events, self.risk, self.history, self.engine, seed=seed)
        return rep, ds


def _run(pipe: _Pipeline, n_reps: int, base_seed: int, body) -> list[Replication]:
    out = []
    for seed in replication_seeds(base_seed, n_reps):
        t0 = time.perf_counter()
        rep, ds = pipe.replicate(seed)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            values = body(rep, ds)
        out.append(Replication(seed, len(rep.events), time.perf_counter() - t0, values))
    return out


# ---------------------------------------------------------------------------
# fixed and time-varying effect recovery
# ---------------------------------------------------------------------------


def recovery_study(study: StudyConfig | None = None, n_reps: int = 50, base_seed: int = 2024,
                   grid_points: int = 50) -> list[Replication]:
    """Fit the data-generating model; record the fixed effect and the curve errors."""
    study = study or StudyConfig()
    pipe = _Pipeline(study)
    grid = np.linspace(study.t_start, study.t_end, grid_points)
    years = np.arange(study.t_start, study.t_end + 1)
    true_curve = np.interp(grid, years, default_tv_curve(years, *study.tv))
    terms = study.term_specs()

    def body(rep, ds):
        fit = fit_smooth_rem(ds, terms)
        beta = float(fit.term_coef("climate")[0])
        sl = fit.design.terms["climate"]
        se = float(np.sqrt(fit.posterior_cov[sl, sl][0, 0]))
        curve = evaluate_tv_effect(fit, "distance", grid)
        inside = (curve.ci_low <= true_curve) & (true_curve <= curve.ci_high)
        return {
            "beta": beta,
            "se": se,
            "covered": abs(beta - study.beta_climate) <= 1.96 * se,
            "tv_coverage": float(inside.mean()),
            "tv_mae": float(np.mean(np.abs(curve.value - true_curve))),
            "tv_range": float(np.ptp(true_curve)),
            "re_sd": dict(fit.re_sd),
        }

    return _run(pipe, n_reps, base_seed, body)


def summarize_recovery(reps: list[Replication], beta_true: float) -> dict:
    beta = np.array([r.values["beta"] for r in reps])
    return {
        "n_reps": len(reps),
        "mean_events": float(np.mean([r.n_events for r in reps])),
        "mean_beta": float(beta.mean()),
        "bias_beta": float(beta.mean() - beta_true),
        "sd_beta": float(beta.std(ddof=1)) if beta.size > 1 else 0.0,
        "coverage_beta": float(np.mean([r.values["covered"] for r in reps])),
        "tv_coverage": float(np.mean([r.values["tv_coverage"] for r in reps])),
        "tv_mae": float(np.mean([r.values["tv_mae"] for r in reps])),
        "tv_range": float(reps[0].values["tv_range"]) if reps else float("nan"),
        "seconds": float(sum(r.seconds for r in reps)),
    }


# ---------------------------------------------------------------------------
# random-effect standard deviation
# ---------------------------------------------------------------------------


def re_sd_study(n_levels: int = 120, sigma: float = 1.0, n_reps: int = 20,
                base_seed: int = 77, level: float = 0.05) -> list[Replication]:
    """Sender random effect with ``n_levels`` levels and known SD; no receiver effect."""
    study = replace(StudyConfig(), n_senders=n_levels, sender_sd=sigma, receiver_sd=0.0,
                    level=level)
    pipe = _Pipeline(study)
    terms = [TermSpec("climate", "linear", "climate"),
             TermSpec("distance", "time_varying", "distance", k=study.k),
             TermSpec("species", "random_effect", "species")]

    def body(rep, ds):
        fit = fit_smooth_rem(ds, terms)
        return {"sd": float(fit.re_sd["species"]),
                "true_sd": float(np.std(rep.sender_re)),
                "n_levels": int(fit.design.terms["species"].stop - fit.design.terms["species"].start)}

    return _run(pipe, n_reps, base_seed, body)


# ---------------------------------------------------------------------------
# baseline hazard
# ---------------------------------------------------------------------------


def _true_cumulative(truth, years: np.ndarray) -> np.ndarray:
    """Integrated baseline at the end of each year in ``years``."""
    all_years = np.arange(truth.t_start, truth.t_end + 1)
    cum = np.cumsum([truth.baseline_at("all", y) for y in all_years])
    return cum[np.searchsorted(all_years, years)]


def baseline_shape_study(study: StudyConfig | None = None, n_reps: int = 50,
                         base_seed: int = 31) -> list[Replication]:
    """Correlation between estimated and true cumulative baseline at event years.

    Defaults to a 60 x 30 network with a baseline that doubles over the
    window; on the 30 x 20 study network a single early event with a
    low-rate case can carry a tenth of the estimated cumulative.
    """
    study = study or replace(StudyConfig(), n_senders=60, n_receivers=30, level=0.01,
                             baseline_growth=1.0)
    pipe = _Pipeline(study)
    terms = study.term_specs()

    def body(rep, ds):
        fit = fit_smooth_rem(ds, terms)
        est = breslow_matched(fit, ds)["all"]
        yrs, cum, _ = est.year_end()
        true = _true_cumulative(pipe.truth, yrs)
        return {"pearson": float(stats.pearsonr(cum, true)[0]) if yrs.size > 2 else float("nan")}

    return _run(pipe, n_reps, base_seed, body)


def baseline_slope_study(hazard: float = 0.02, n_reps: int = 50, base_seed: int = 32,
                         n_senders: int = 60, n_receivers: int = 30, beta_climate: float = -0.5,
                         beta_distance: float = -0.5, temp_sd: float = 1.0) -> list[Replication]:
    """Constant baseline, fixed effects only; slope of the estimated cumulative.

    The larger world keeps roughly a thousand events per replication: the
    per-event increments are heavy-tailed when rates are skewed, so small
    networks give a noisy slope.
    """
    study = replace(StudyConfig(), n_senders=n_senders, n_receivers=n_receivers, level=hazard,
                    baseline_growth=0.0, sender_sd=0.0, receiver_sd=0.0, temp_sd=temp_sd,
                    beta_climate=beta_climate, tv=(beta_distance, beta_distance))
    pipe = _Pipeline(study)
    terms = [TermSpec("climate", "linear", "climate"), TermSpec("distance", "linear", "distance")]

    def body(rep, ds):
        fit = fit_smooth_rem(ds, terms)
        yrs, cum, _ = breslow_matched(fit, ds)["all"].year_end()
        slope = float(np.polyfit(yrs, cum, 1)[0]) if yrs.size > 2 else float("nan")
        return {"slope": slope, "hazard": hazard}

    return _run(pipe, n_reps, base_seed, body)


# ---------------------------------------------------------------------------
# goodness of fit
# ---------------------------------------------------------------------------


def gof_study(n_reps: int = 50, base_seed: int = 41, beta_urban: float = 1.0,
              min_events: int = 5, alpha: float = 0.05) -> list[Replication]:
    """Calibration and power of the receiver statistics.

    The truth has a strong receiver attribute ``urban`` and no receiver
    random effect.  The correct fit includes ``urban``; the misspecified fit
    omits it.  A region random effect is left out of both fits because its
    score equation makes each receiver statistic equal to the penalty times
    the fitted level, which shrinks the statistics toward zero.
    """
    study = replace(StudyConfig(), receiver_sd=0.0)
    pipe = _Pipeline(study, world_kw={"receiver_attribute": True},
                     extra_fixed={"urban": beta_urban})
    base = [TermSpec("climate", "linear", "climate"),
            TermSpec("distance", "time_varying", "distance", k=study.k),
            TermSpec("species", "random_effect", "species")]
    correct = base + [TermSpec("urban", "linear", "urban")]

    def body(rep, ds):
        good = gof_report(fit_smooth_rem(ds, correct), ds, alpha=alpha, min_events=min_events)
        bad = gof_report(fit_smooth_rem(ds, base), ds, alpha=alpha, min_events=min_events)
        return {
            "ks_pvalue": good.ks_pvalue,
            "n_summary": good.n_summary,
            "z": good.z_values(min_events).tolist(),
            "rejections_fdr_correct": good.summary["rejections_fdr"],
            "rejections_fdr_omitted": bad.summary["rejections_fdr"],
            "rejections_raw_omitted": bad.summary["rejections_raw"],
        }

    return _run(pipe, n_reps, base_seed, body)


# ---------------------------------------------------------------------------
# model selection
# ---------------------------------------------------------------------------


def aic_selection_study(study: StudyConfig | None = None, n_reps: int = 50,
                        base_seed: int = 51, drop: str = "distance") -> list[Replication]:
    """Corrected AIC of the data-generating model against the model without ``drop``."""
    study = study or StudyConfig()
    pipe = _Pipeline(study)
    full = study.term_specs()
    reduced = [t for t in full if t.name != drop]

    def body(rep, ds):
        a_full = fit_smooth_rem(ds, full).aic_corrected
        a_red = fit_smooth_rem(ds, reduced).aic_corrected
        return {"aic_full": float(a_full), "aic_reduced": float(a_red),
                "picks_true": bool(a_full < a_red)}

    return _run(pipe, n_reps, base_seed, body)


# ---------------------------------------------------------------------------
# scaling
# ---------------------------------------------------------------------------


def synthetic_dataset(n_events: int, n_levels: int = 49, seed: int = 0,
                      first_year: int = 1880, n_years: int = 126) -> CaseControlDataset:
    """Case-control rows drawn from a logistic model with known coefficients.

    Two numeric covariates (``x1`` fixed effect, ``x2`` with a sine-shaped
    time-varying effect) and one label column with ``n_levels`` levels.
    """
    rng = np.random.default_rng(seed)
    years = np.sort(rng.integers(first_year, first_year + n_years, n_events))
    u = (years - first_year) / (n_years - 1)
    xc = rng.normal(size=(n_events, 2))
    xk = rng.normal(size=(n_events, 2))
    b = rng.normal(0.0, 0.7, n_levels)
    lc = rng.integers(0, n_levels, n_events)
    lk = rng.integers(0, n_levels, n_events)
    eta = (0.5 * (xc[:, 0] - xk[:, 0]) + np.sin(2 * np.pi * u) * (xc[:, 1] - xk[:, 1])
           + b[lc] - b[lk])
    # response is always "case"; swap roles where the draw says the control won
    swap = rng.random(n_events) > 1.0 / (1.0 + np.exp(-eta))
    xc[swap], xk[swap] = xk[swap].copy(), xc[swap].copy()
    lc[swap], lk[swap] = lk[swap].copy(), lc[swap].copy()
    names = np.array([f"L{k:03d}" for k in range(n_levels)], dtype=object)
    recv = np.array([f"r{k}" for k in range(20)], dtype=object)
    return CaseControlDataset(
        event_index=np.arange(n_events), year=years,
        stratum=np.full(n_events, "all", dtype=object),
        control_stratum=np.full(n_events, "all", dtype=object),
        weight=np.ones(n_events), x_case=xc, x_control=xk,
        case_labels={"lev": names[lc]}, control_labels={"lev": names[lk]},
        case_sender=names[lc], case_receiver=recv[rng.integers(0, 20, n_events)],
        control_sender=names[lk], control_receiver=recv[rng.integers(0, 20, n_events)],
        n_at_risk=np.full(n_events, 10_000), n_stratum=np.full(n_events, 10_000),
        covariate_names=["x1", "x2"], factor_names=["lev"],
        meta={"t_start": first_year, "t_end": first_year + n_years - 1},
    )


SCALING_TERMS = [TermSpec("x1", "linear", "x1"), TermSpec("x2", "time_varying", "x2", k=10),
                 TermSpec("lev", "random_effect", "lev")]


def time_fit(n_events: int, n_levels: int = 49, seed: int = 0, repeats: int = 3) -> float:
    """Best-of-``repeats`` wall-clock seconds for one full fit."""
    ds = synthetic_dataset(n_events, n_levels, seed)
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fit_smooth_rem(ds, SCALING_TERMS)
        best = min(best, time.perf_counter() - t0)
    return float(best)


def scaling_slope(sizes=(2000, 4000, 8000), n_levels: int = 49, repeats: int = 3) -> dict:
    times = [time_fit(n, n_levels, seed=k, repeats=repeats) for k, n in enumerate(sizes)]
    slope = float(np.polyfit(np.log(sizes), np.log(times), 1)[0])
    return {"sizes": list(sizes), "seconds": times, "loglog_slope": slope,
            "d": 1 + 10 + n_levels}
