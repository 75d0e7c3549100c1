import numpy as np
import pytest

from smoothrem.sampling import CaseControlDataset


def make_dataset(x_case, x_control, years=None, case_labels=None, control_labels=None,
                 names=None, weight=None, event_index=None, stratum=None, control_stratum=None,
                 case_receiver=None, control_receiver=None, n_at_risk=None, n_stratum=None,
                 meta=None):
    """Case-control dataset from raw arrays with sensible defaults."""
    x_case = np.atleast_2d(np.asarray(x_case, dtype=float))
    x_control = np.atleast_2d(np.asarray(x_control, dtype=float))
    n, p = x_case.shape
    case_labels = case_labels or {}
    control_labels = control_labels or {}
    obj = lambda a: np.asarray(a, dtype=object)
    return CaseControlDataset(
        event_index=np.arange(n) if event_index is None else np.asarray(event_index),
        year=np.full(n, 2000) if years is None else np.asarray(years),
        stratum=obj(["all"] * n) if stratum is None else obj(stratum),
        control_stratum=obj(["all"] * n) if control_stratum is None else obj(control_stratum),
        weight=np.ones(n) if weight is None else np.asarray(weight, dtype=float),
        x_case=x_case,
        x_control=x_control,
        case_labels={k: obj(v) for k, v in case_labels.items()},
        control_labels={k: obj(v) for k, v in control_labels.items()},
        case_sender=obj([f"s{k}" for k in range(n)]),
        case_receiver=obj(["r0"] * n) if case_receiver is None else obj(case_receiver),
        control_sender=obj([f"c{k}" for k in range(n)]),
        control_receiver=obj(["r1"] * n) if control_receiver is None else obj(control_receiver),
        n_at_risk=np.full(n, 100) if n_at_risk is None else np.asarray(n_at_risk),
        n_stratum=np.full(n, 100) if n_stratum is None else np.asarray(n_stratum),
        covariate_names=names or [f"x{k}" for k in range(p)],
        factor_names=list(case_labels),
        meta=meta or {},
    )


@pytest.fixture
def small_world():
    from smoothrem.simulator import StudyConfig
    study = StudyConfig(n_senders=20, n_receivers=10)
    world = study.world()
    truth = study.truth(world)
    return study, world, truth


@pytest.fixture
def simulated(small_world):
    """One replication on the 20 x 10 network with its case-control dataset."""
    from smoothrem.covariates import CovariateEngine
    from smoothrem.sampling import build_case_control_dataset
    from smoothrem.simulator import simulate_sequence
    study, world, truth = small_world
    risk, hist = world.initial_state()
    seq = simulate_sequence(truth, risk, hist, seed=3)
    engine = CovariateEngine(world.covariate_specs, world.tables, hist)
    ds = build_case_control_dataset(seq, risk, hist, engine, m=2, seed=3)
    return study, world, truth, risk, hist, seq, ds


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(results):
        terminalreporter.write_line(results[k])
