import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from smoothrem.events import (Dyad, Event, EventSequence, SequencingError, ValidationError,
                              apply_event, build_risk_set, initial_state, load_network,
                              validate_sequence)


def ev(s, r, year, rank=0):
    return Event(Dyad(s, r), year, rank)


def test_full_product_risk_set():
    risk = build_risk_set(["a", "b"], ["x", "y"])
    assert risk.n == 4
    assert sum(risk.counts.values()) == 4


def test_all_native_gives_empty_risk_set():
    native = [(s, r) for s in "ab" for r in "xy"]
    assert build_risk_set(["a", "b"], ["x", "y"], native).n == 0


def test_paper_sized_risk_set():
    rng = np.random.default_rng(0)
    senders = [f"s{i}" for i in range(4035)]
    receivers = [f"r{j}" for j in range(188)]
    codes = rng.choice(4035 * 188, size=61546, replace=False)
    native = [(senders[c // 188], receivers[c % 188]) for c in codes]
    risk = build_risk_set(senders, receivers, native)
    assert risk.n == 4035 * 188 - 61546


def test_apply_event_decrements_and_records():
    risk, hist = initial_state(["a", "b"], ["x", "y"])
    apply_event(risk, hist, ev("a", "x", 1990))
    assert risk.n == 3
    assert not risk.contains("a", "x")
    assert hist.last_arrival(0, 1991) == 0


def test_apply_same_event_twice_fails():
    risk, hist = initial_state(["a", "b"], ["x", "y"])
    apply_event(risk, hist, ev("a", "x", 1990))
    with pytest.raises(SequencingError):
        apply_event(risk, hist, ev("a", "x", 1991))


def test_native_dyad_event_fails():
    risk, hist = initial_state(["a"], ["x", "y"], [("a", "x")])
    with pytest.raises(SequencingError):
        apply_event(risk, hist, ev("a", "x", 1990))


def test_13094_sequential_events():
    rng = np.random.default_rng(1)
    senders = [f"s{i}" for i in range(400)]
    receivers = [f"r{j}" for j in range(60)]
    risk, hist = initial_state(senders, receivers)
    n0 = risk.n
    codes = rng.choice(n0, size=13094, replace=False)
    years = np.sort(rng.integers(1880, 2006, size=13094))
    for k, (c, y) in enumerate(zip(codes, years)):
        d = risk.index.dyad(int(c))
        apply_event(risk, hist, Event(d, int(y), k))
    assert risk.n == n0 - 13094


def test_validate_sequence_rules():
    risk, _ = initial_state(["a", "b"], ["x", "y"], [("b", "y")])
    assert validate_sequence([ev("a", "x", 1990), ev("a", "y", 1991)], risk) == []
    out = validate_sequence([ev("a", "x", 2000), ev("a", "y", 1990)], risk)
    assert [v.rule for v in out] == ["ordering"]
    out = validate_sequence([ev("b", "y", 1990)], risk)
    assert [v.rule for v in out] == ["exclusion"]
    out = validate_sequence([ev("a", "x", 1990), ev("a", "x", 1991)], risk)
    assert [v.rule for v in out] == ["recurrence"]
    out = validate_sequence([ev("zz", "x", 1990)], risk)
    assert out[0].rule == "unknown_actor" and out[0].event_index == 0


def test_sender_receiver_overlap_rejected():
    with pytest.raises(ValidationError):
        build_risk_set(["a", "x"], ["x"])


def test_sequence_window_enforced():
    with pytest.raises(ValidationError):
        EventSequence([ev("a", "x", 1870)], 1880, 2005)


def test_ranks_follow_input_order():
    seq = EventSequence.from_records([("a", "x", 1990), ("b", "x", 1990), ("a", "y", 1989)])
    assert [(e.sender, e.receiver, e.within_year_rank) for e in seq] == [
        ("a", "y", 0), ("a", "x", 0), ("b", "x", 1)]


def test_strata_counts():
    risk = build_risk_set(["a", "b", "c"], ["x", "y"], strata={"a": "ins", "b": "plt", "c": "plt"})
    assert risk.counts == {"ins": 2, "plt": 4}
    assert risk.n_g("plt") == 4


def test_history_is_strict_past():
    risk, hist = initial_state(["a", "b"], ["x"])
    apply_event(risk, hist, ev("a", "x", 1990))
    apply_event(risk, hist, ev("b", "x", 1995))
    assert hist.last_arrival(0, 1995) == 0
    assert hist.last_arrival(0, 1996) == 1
    assert hist.last_arrival(0, 1990) is None
    assert not hist.occupied(0, 1990)[0] and hist.occupied(0, 1991)[0]


def test_load_network_roundtrip(tmp_path):
    (tmp_path / "ev.csv").write_text("sender,receiver,year\na,x,1990\nb,y,1991\n")
    (tmp_path / "nat.csv").write_text("sender,receiver\na,y\nzz,x\n")
    (tmp_path / "st.csv").write_text("sender,stratum\na,ins\nb,plt\n")
    (tmp_path / "act.csv").write_text("role,id\nsender,c\nreceiver,z\n")
    seq, risk, hist, native, rep = load_network(tmp_path / "ev.csv", tmp_path / "nat.csv",
                                                tmp_path / "st.csv", actors_path=tmp_path / "act.csv")
    assert len(seq) == 2 and rep.dropped_native == 1
    assert risk.index.senders == ["a", "b", "c"] and risk.index.receivers == ["x", "y", "z"]
    assert risk.n == 9 - 1
    assert validate_sequence(seq.events, risk) == []


def test_load_network_bad_role(tmp_path):
    (tmp_path / "ev.csv").write_text("sender,receiver,year\na,x,1990\n")
    (tmp_path / "act.csv").write_text("role,id\nboss,c\n")
    with pytest.raises(ValidationError):
        load_network(tmp_path / "ev.csv", actors_path=tmp_path / "act.csv")


@st.composite
def replay_case(draw):
    n_s = draw(st.integers(1, 6))
    n_r = draw(st.integers(1, 6))
    n = n_s * n_r
    native = draw(st.sets(st.integers(0, n - 1), max_size=n))
    remaining = [c for c in range(n) if c not in native]
    order = draw(st.permutations(remaining))
    k = draw(st.integers(0, len(order)))
    return n_s, n_r, sorted(native), order[:k]


@given(replay_case())
@settings(max_examples=60, deadline=None)
def test_replay_prefix_counts(case):
    n_s, n_r, native, order = case
    senders = [f"s{i}" for i in range(n_s)]
    receivers = [f"r{j}" for j in range(n_r)]
    nat = [(senders[c // n_r], receivers[c % n_r]) for c in native]
    risk, hist = initial_state(senders, receivers, nat)
    n0 = risk.n
    assert n0 == n_s * n_r - len(native)
    for k, c in enumerate(order):
        d = risk.index.dyad(c)
        year = 1900 + k
        assert hist.last_arrival(c % n_r, year) is None or hist.first_year[c // n_r, c % n_r] != year
        apply_event(risk, hist, Event(d, year, 0))
        assert risk.n == n0 - (k + 1)
        assert c not in risk
        # no receiver is ever a sender
        assert d.receiver not in risk.index.sender_pos
    members = set(risk.members().tolist())
    assert members == set(range(n_s * n_r)) - set(native) - set(order)
