import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import bh_reference
from smoothrem.basis import TermSpec
from smoothrem.covariates import CovariateEngine
from smoothrem.fit import fit_smooth_rem
from smoothrem.gof import (fdr_adjust, gof_report, martingale_gof_process,
                           standardized_statistic)
from smoothrem.sampling import build_case_control_dataset
from smoothrem.simulator import StudyConfig, replication_seeds, simulate_sequence

from conftest import make_dataset


def test_zero_gamma_statistic():
    # r0 is the case receiver in 3 events and the control receiver in 2 others
    case_r = ["r0", "r0", "r0", "r1", "r2", "r0"]
    ctrl_r = ["r1", "r2", "r3", "r0", "r0", "r0"]
    ds = make_dataset(np.ones((6, 1)), np.ones((6, 1)), case_receiver=case_r,
                      control_receiver=ctrl_r)
    fit = fit_smooth_rem(ds, [TermSpec("x0", "linear", "x0")])
    G, V = martingale_gof_process(fit, ds, "r0")
    c, v = 3, 2  # the last row has r0 on both sides and contributes 0
    assert G == pytest.approx(c - (c + v) / 2)
    assert V == pytest.approx((c + v) * 0.25)


def test_absent_receiver_is_flagged():
    ds = make_dataset(np.ones((2, 1)), np.ones((2, 1)))
    fit = fit_smooth_rem(ds, [TermSpec("x0", "linear", "x0")])
    rep = gof_report(fit, ds, receivers=["r0", "r1", "ghost"])
    ghost = next(r for r in rep.rows if r.receiver == "ghost")
    assert ghost.G == 0 and ghost.variance == 0 and ghost.flag == "zero_variance"
    assert np.isnan(ghost.p)


def test_standardized_statistic():
    assert standardized_statistic(0.0, 3.0) == 0.0
    assert standardized_statistic(2.0, 4.0) == 1.0
    assert np.isnan(standardized_statistic(1.0, 0.0))


def test_fdr_examples():
    assert np.allclose(fdr_adjust([0.01, 0.02, 0.03]), [0.03, 0.03, 0.03])
    assert np.allclose(fdr_adjust([0.2]), [0.2])
    assert np.allclose(fdr_adjust([1.0, 1.0, 1.0]), 1.0)
    with pytest.raises(ValueError):
        fdr_adjust([0.5, 1.2])


@given(st.lists(st.floats(0, 1), min_size=1, max_size=25))
def test_fdr_matches_reference_and_is_monotone(p):
    q = fdr_adjust(p)
    assert np.allclose(q, bh_reference(p), atol=1e-12)
    order = np.argsort(p, kind="stable")
    assert np.all(np.diff(q[order]) >= -1e-12)
    assert np.all(q <= 1.0) and np.all(q >= np.asarray(p) - 1e-12)


def test_mass_conservation_and_shift_invariance(simulated):
    study, *_, ds = simulated
    terms = study.term_specs(random_effects=False)
    fit = fit_smooth_rem(ds, terms)
    rep = gof_report(fit, ds)
    assert sum(r.G for r in rep.rows) == pytest.approx(0.0, abs=1e-9)
    # shifting an absolute covariate leaves differences, and so the fit, unchanged,
    # but adds a constant to every linear predictor
    k = ds.covariate_names.index("climate")
    shifted = ds.subset(np.arange(ds.n_rows))
    shifted.x_case = ds.x_case.copy()
    shifted.x_control = ds.x_control.copy()
    shifted.x_case[:, k] += 5.0
    shifted.x_control[:, k] += 5.0
    rep2 = gof_report(fit, shifted)
    assert np.allclose([r.G for r in rep.rows], [r.G for r in rep2.rows], atol=1e-12)


def test_report_outputs(simulated, tmp_path):
    study, *_, ds = simulated
    fit = fit_smooth_rem(ds, study.term_specs(random_effects=False))
    rep = gof_report(fit, ds, min_events=3)
    rep.to_csv(tmp_path / "g.csv")
    text = rep.summary_json(tmp_path / "g.json")
    assert (tmp_path / "g.csv").read_text().startswith("receiver,events,G,variance,z,p,q,flag")
    assert '"ks_pvalue"' in text
    assert rep.n_summary == sum(1 for r in rep.rows if r.events >= 3 and r.flag == "")


@pytest.mark.slow
def test_variance_estimator_matches_monte_carlo_at_true_gamma():
    study = StudyConfig(n_senders=30, n_receivers=12, sender_sd=0.0, receiver_sd=0.0,
                        tv=(-0.8, -0.8), level=0.03)
    world = study.world(labels=False)
    truth = study.truth(world, sender_sd=0.0, receiver_sd=0.0)
    risk, hist = world.initial_state()
    eng = CovariateEngine(world.covariate_specs, world.tables, hist)
    terms = [TermSpec("climate", "linear", "climate"), TermSpec("distance", "linear", "distance")]
    G, V = [], []
    fit = None
    for seed in replication_seeds(123, 300):
        seq = simulate_sequence(truth, risk, hist, seed)
        ds = build_case_control_dataset(seq, risk, hist, eng, seed=seed)
        if fit is None:
            fit = fit_smooth_rem(ds, terms)
        fit.gamma_hat = np.array([study.beta_climate, -0.8])
        rep = gof_report(fit, ds, receivers=world.receivers)
        G.append([r.G for r in rep.rows])
        V.append([r.variance for r in rep.rows])
    G, V = np.array(G), np.array(V)
    ratio = G.var(axis=0, ddof=1).sum() / V.mean(axis=0).sum()
    assert abs(ratio - 1) <= 0.15
    assert abs(G.mean()) < 0.1
