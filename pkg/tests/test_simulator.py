import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import death_process_mean
from smoothrem.events import initial_state, validate_sequence
from smoothrem.simulator import (StudyConfig, TruthSpec, make_world, replication_seeds,
                                 run_replications, simulate_sequence)


def constant_truth(c, years=1, t_start=2000):
    return TruthSpec(t_start=t_start, t_end=t_start + years - 1, baseline=np.full(years, c))


def test_constant_hazard_single_year_count():
    risk, hist = initial_state([f"s{i}" for i in range(10)], [f"r{j}" for j in range(10)])
    c = 0.01
    counts = np.array([len(simulate_sequence(constant_truth(c), risk, hist, s)) for s in range(500)])
    expected = 100 * (1 - np.exp(-c))
    assert expected == pytest.approx(death_process_mean(100, [c])[0], rel=1e-10)
    se = counts.std(ddof=1) / np.sqrt(500)
    assert abs(counts.mean() - expected) <= 3 * se


def test_scaling_rates_scales_counts():
    risk, hist = initial_state([f"s{i}" for i in range(6)], [f"r{j}" for j in range(5)])
    for c in (0.01, 0.04):
        counts = np.array([len(simulate_sequence(constant_truth(c, 2), risk, hist, s))
                           for s in range(400)])
        oracle, _ = death_process_mean(30, [c, c])
        assert abs(counts.mean() - oracle) <= 3 * counts.std(ddof=1) / np.sqrt(400)


def test_empty_risk_set():
    risk, hist = initial_state(["a"], ["x"], [("a", "x")])
    assert len(simulate_sequence(constant_truth(1.0, 5), risk, hist, 0)) == 0


def test_run_replications_reproduces_single_runs(small_world):
    study, world, truth = small_world
    risk, hist = world.initial_state()
    reps = run_replications(truth, risk, hist, n_reps=1, base_seed=9)
    seed = replication_seeds(9, 1)[0]
    assert reps[0].events.events == simulate_sequence(truth, risk, hist, seed).events
    again = run_replications(truth, risk, hist, n_reps=3, base_seed=9)
    twice = run_replications(truth, risk, hist, n_reps=3, base_seed=9)
    assert [r.events.events for r in again] == [r.events.events for r in twice]
    assert np.array_equal(again[1].sender_re, twice[1].sender_re)
    assert not np.array_equal(again[0].sender_re, again[1].sender_re)


def test_inputs_not_modified(small_world):
    study, world, truth = small_world
    risk, hist = world.initial_state()
    n0, fy = risk.n, hist.first_year.copy()
    simulate_sequence(truth, risk, hist, 1)
    assert risk.n == n0 and np.array_equal(hist.first_year, fy)


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=15, deadline=None)
def test_sequence_invariants(seed):
    world = make_world(12, 8, 1950, 1990, seed=seed % 5)
    truth = StudyConfig(n_senders=12, n_receivers=8).truth(world, level=0.05)
    risk, hist = world.initial_state()
    seq = simulate_sequence(truth, risk, hist, seed)
    years = seq.years
    assert np.all(np.diff(years) >= 0)
    assert np.all((years >= 1950) & (years <= 1990))
    keys = [(e.sender, e.receiver) for e in seq]
    assert len(keys) == len(set(keys))
    assert validate_sequence(seq.events, risk) == []


def test_truth_validation():
    with pytest.raises(ValueError):
        TruthSpec(t_start=2000, t_end=2002, baseline=np.ones(2))
    with pytest.raises(ValueError):
        TruthSpec(t_start=2000, t_end=2001, baseline=np.array([1.0, 0.0]))
    with pytest.raises(ValueError):
        TruthSpec(t_start=2000, t_end=2001, baseline=np.ones(2), time_varying={"x": np.ones(3)})


def test_digest_tracks_truth(small_world):
    study, world, truth = small_world
    same = study.truth(world)
    other = study.truth(world, beta_climate=-0.1)
    assert truth.digest() == same.digest() != other.digest()


def test_stratified_baselines(small_world):
    study = StudyConfig(n_senders=20, n_receivers=10)
    world = study.world(n_strata=2)
    truth = study.truth(world, strata_scale={"plt": 3.0})
    assert truth.baseline_at("plt", 1900) == pytest.approx(3 * truth.baseline_at("ins", 1900))
    risk, hist = world.initial_state()
    seq = simulate_sequence(truth, risk, hist, 4)
    assert {e.dyad.stratum for e in seq} <= {"ins", "plt"}
