import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import brute_min_abs_diff, brute_min_over_invaded
from smoothrem.covariates import (NOVELTY, RARE, CovariateEngine, CovariateSpec, CovariateTables,
                                  MissingOrigin, YearTable, eval_group_indicator,
                                  eval_min_abs_diff, eval_min_over_invaded, last_arrival_label,
                                  relabel_rare)
from smoothrem.events import Dyad, Event, apply_event, initial_state
from smoothrem.simulator import StudyConfig, simulate_sequence


def state(native=(), receivers=("A", "B", "C")):
    return initial_state(["s", "t"], list(receivers), list(native))


def test_min_over_invaded_single_log():
    _, hist = state([("s", "A")])
    D = np.array([[0, np.e**2, 1], [np.e**2, 0, 1], [1, 1, 0]])
    assert eval_min_over_invaded("s", "B", 1900, D, hist, transform="log") == pytest.approx(2.0)


def test_min_over_invaded_takes_min():
    _, hist = state([("s", "A"), ("s", "C")])
    D = np.array([[0, 10, 5], [10, 0, 3], [5, 3, 0]], dtype=float)
    assert eval_min_over_invaded("s", "B", 1900, D, hist) == 3


def test_min_over_invaded_missing_origin():
    _, hist = state()
    with pytest.raises(MissingOrigin):
        eval_min_over_invaded("s", "B", 1900, np.zeros((3, 3)), hist)


def test_min_abs_diff_examples():
    attr = {"A": 20.0, "B": 23.0, "C": 24.0}
    _, hist = state([("s", "A")])
    assert eval_min_abs_diff("s", "B", 1900, attr, hist) == 3
    _, hist = state([("s", "A"), ("s", "C")])
    assert eval_min_abs_diff("s", "B", 1900, attr, hist) == 1


def test_group_indicator_examples():
    groups = {"A": "G", "B": "G", "C": "independent"}
    _, hist = state([("s", "A")])
    assert eval_group_indicator("s", "C", 1900, groups, hist) == 0
    assert eval_group_indicator("s", "B", 1900, groups, hist) == 1
    _, hist = state([("s", "C")])
    assert eval_group_indicator("s", "B", 1900, groups, hist) == 0


def test_last_arrival_label_examples():
    risk, hist = initial_state(["X", "Y", "s"], ["R"])
    assert last_arrival_label("s", "R", 2000, hist) == NOVELTY
    apply_event(risk, hist, Event(Dyad("X", "R"), 1990))
    apply_event(risk, hist, Event(Dyad("Y", "R"), 1995))
    assert last_arrival_label("s", "R", 2000, hist) == "s.Y"
    assert last_arrival_label("s", "R", 1995, hist) == "s.X"


def test_relabel_rare_examples():
    assert relabel_rare(["a", "a", "b"]) == ["a", "a", RARE]
    assert relabel_rare(["a", "b"]) == [RARE, RARE]
    once = relabel_rare(["a", "b", "b", "c"])
    assert relabel_rare(once) == once


@given(st.lists(st.sampled_from(list("abcdef")), max_size=30))
def test_relabel_rare_properties(labels):
    out = relabel_rare(labels)
    counts = {x: labels.count(x) for x in labels}
    for a, b in zip(labels, out):
        assert b == (RARE if counts[a] == 1 else a)
    assert relabel_rare(out) == relabel_rare(relabel_rare(out))


def test_year_table_carry_forward():
    t = YearTable(default=0.0)
    t.set(("a", "b"), 1990, 5.0)
    t.set(("a", "b"), 2000, 7.0)
    assert t.get(("a", "b"), 1989) == 0.0
    assert t.get(("a", "b"), 1995) == 5.0
    assert t.get(("a", "b"), 2003) == 7.0
    assert t.get(("x", "y"), 2003) == 0.0


def test_sum_over_invaded_and_static_dyadic():
    risk, hist = initial_state(["s"], ["A", "B", "C"], [("s", "A"), ("s", "C")])
    trade = YearTable()
    trade.set(("A", "B"), 1990, 2.0)
    trade.set(("B", "C"), 1995, 3.0)
    static = YearTable()
    static.set(("s", "B"), 1900, 4.0)
    tables = CovariateTables(pair_tables={"trade": trade, "st": static})
    eng = CovariateEngine([CovariateSpec("tr", "sum_over_invaded", "trade"),
                           CovariateSpec("sd", "static_dyadic", "st")], tables, hist)
    assert eng.values("s", "B", 1992).tolist() == [2.0, 4.0]
    assert eng.values("s", "B", 1999).tolist() == [5.0, 4.0]


@pytest.fixture(scope="module")
def replay():
    study = StudyConfig(n_senders=25, n_receivers=12)
    world = study.world(receiver_attribute=True)
    truth = study.truth(world, level=0.05)
    risk, hist = world.initial_state()
    seq = simulate_sequence(truth, risk, hist, seed=11)
    final = hist.copy()
    r2 = risk.copy()
    for e in seq:
        apply_event(r2, final, e)
    return world, seq, final


def test_engine_matches_brute_force_on_1000_probes(replay):
    world, seq, hist = replay
    D = world.tables.distances["dist"]
    temp = world.tables.receiver_attributes["temp"]
    attr = np.array([temp[r] for r in world.receivers])
    eng = CovariateEngine(world.covariate_specs, world.tables, hist)
    rng = np.random.default_rng(0)
    fy = hist.first_year
    for _ in range(1000):
        i = int(rng.integers(len(world.senders)))
        j = int(rng.integers(len(world.receivers)))
        year = int(rng.integers(world.t_start, world.t_end + 2))
        x = eng.values_many([i], [j], year)[0]
        dist = brute_min_over_invaded(fy, D, i, j, year)
        clim = brute_min_abs_diff(fy, attr, i, j, year)
        assert x[eng.names.index("distance")] == pytest.approx(np.log1p(dist), abs=1e-12)
        assert x[eng.names.index("climate")] == pytest.approx(clim, abs=1e-12)


def test_matrix_agrees_with_values(replay):
    world, seq, hist = replay
    eng = CovariateEngine(world.covariate_specs, world.tables, hist)
    M = eng.matrix(1950)
    i, j = 3, 7
    assert np.allclose(M[i, j], eng.values_many([i], [j], 1950)[0])


def test_strict_past_and_monotone_shrinkage(replay):
    world, seq, full = replay
    year_mid = seq[len(seq) // 2].year
    partial_risk, partial_hist = world.initial_state()
    for e in seq:
        if e.year < year_mid:
            apply_event(partial_risk, partial_hist, e)
    eng_full = CovariateEngine(world.covariate_specs, world.tables, full)
    eng_part = CovariateEngine(world.covariate_specs, world.tables, partial_hist)
    # later events (including those of year_mid itself) are invisible at year_mid
    assert np.array_equal(eng_full.matrix(year_mid), eng_part.matrix(year_mid), equal_nan=True)
    k = eng_full.names.index("distance")
    prev = None
    for year in range(world.t_start, world.t_end + 1, 15):
        cur = eng_full.matrix(year)[..., k]
        if prev is not None:
            assert (np.isnan(prev) | (cur <= prev + 1e-12)).all()
        prev = cur


def test_last_arrival_column_uses_prior_years(replay):
    world, seq, hist = replay
    eng = CovariateEngine([CovariateSpec("la", "last_arrival")], None, hist)
    e = seq[len(seq) - 1]
    i = world.senders.index(e.sender)
    j = world.receivers.index(e.receiver)
    (label,), = eng.labels_many([i], [j], e.year)
    expected = last_arrival_label(e.sender, e.receiver, e.year, hist)
    assert label == expected


def test_log_transform_of_zero_rejected():
    _, hist = state([("s", "A")])
    with pytest.raises(ValueError):
        eval_min_over_invaded("s", "A", 1900, np.zeros((3, 3)), hist, transform="log")


@given(st.integers(1, 5), st.integers(2, 6), st.data())
@settings(max_examples=40, deadline=None)
def test_engine_is_pure(n_s, n_r, data):
    rng = np.random.default_rng(data.draw(st.integers(0, 10**6)))
    senders = [f"s{i}" for i in range(n_s)]
    receivers = [f"r{j}" for j in range(n_r)]
    native = [(s, receivers[int(rng.integers(n_r))]) for s in senders]
    risk, hist = initial_state(senders, receivers, native)
    xy = rng.uniform(0, 10, (n_r, 2))
    D = np.sqrt(((xy[:, None] - xy[None]) ** 2).sum(-1))
    tables = CovariateTables(distances={"d": D})
    spec = [CovariateSpec("d", "min_over_invaded", "d")]
    a = CovariateEngine(spec, tables, hist).matrix(1900)
    b = CovariateEngine(spec, tables, hist.copy()).matrix(1900)
    assert np.array_equal(a, b)
