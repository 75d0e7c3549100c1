import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from smoothrem.basis import (BasisRankError, SpecError, TermSpec, TPRSBasis, assemble_design,
                             random_effect_block)
from smoothrem.fit import evaluate_tv_effect, fit_smooth_rem

from conftest import make_dataset

YEARS = np.arange(1880, 2006)


def basis_fit(B, S, y, lam):
    return np.linalg.solve(B.T @ B + lam * S, B.T @ y)


@pytest.mark.parametrize("coef", [(3.0, 0.0), (-1.0, 0.02)])
def test_null_space_reproduced_without_penalty_cost(coef):
    basis = TPRSBasis(YEARS, k=10)
    B = basis(YEARS)
    y = coef[0] + coef[1] * (YEARS - 1880)
    g = basis_fit(B, basis.penalty, y, 1e6)
    assert np.allclose(B @ g, y, atol=1e-8)
    assert g @ basis.penalty @ g == pytest.approx(0.0, abs=1e-10)


def test_penalized_beats_unpenalized_on_noisy_sine():
    rng = np.random.default_rng(4)
    truth = lambda t: np.sin(2 * np.pi * (t - 1880) / 125)
    train = np.sort(rng.uniform(1880, 2005, 126))
    test = np.linspace(1881, 2004, 400)
    err_pen, err_raw = [], []
    for _ in range(20):
        y = truth(train) + rng.normal(0, 0.5, train.size)
        basis = TPRSBasis(np.round(train), k=10)
        B = basis(train)
        # generalized cross-validation over lambda for the penalized fit
        best = None
        for lam in np.exp(np.linspace(-12, 6, 60)):
            A = B @ np.linalg.solve(B.T @ B + lam * basis.penalty, B.T)
            r = y - A @ y
            gcv = train.size * (r @ r) / (train.size - np.trace(A)) ** 2
            if best is None or gcv < best[0]:
                best = (gcv, lam)
        g_pen = basis_fit(B, basis.penalty, y, best[1])
        g_raw = np.linalg.lstsq(B, y, rcond=None)[0]
        Bt = basis(test)
        err_pen.append(np.mean((Bt @ g_pen - truth(test)) ** 2))
        err_raw.append(np.mean((Bt @ g_raw - truth(test)) ** 2))
    assert np.mean(err_pen) < np.mean(err_raw)


def test_penalty_rank_and_psd():
    basis = TPRSBasis(YEARS, k=10)
    S = basis.penalty
    ev = np.linalg.eigvalsh(S)
    assert np.allclose(S, S.T)
    assert ev.min() >= -1e-10 * ev.max()
    assert np.linalg.matrix_rank(S) == 8


def test_matches_dense_thin_plate_interpolation_when_full_rank():
    years = np.arange(1900, 1915)
    basis = TPRSBasis(years, k=years.size)
    rng = np.random.default_rng(0)
    y = rng.normal(size=years.size)
    # full-rank basis spans the exact interpolant
    g = np.linalg.solve(basis(years), y)
    u = (years - years[0]) / (years[-1] - years[0])
    E = np.abs(u[:, None] - u[None, :]) ** 3 / 12
    T = np.column_stack([np.ones_like(u), u])
    K = np.block([[E, T], [T.T, np.zeros((2, 2))]])
    coef = np.linalg.solve(K, np.r_[y, 0, 0])
    mid = np.linspace(1900, 1914, 57)
    um = (mid - years[0]) / (years[-1] - years[0])
    dense = np.abs(um[:, None] - u[None, :]) ** 3 / 12 @ coef[:-2] + coef[-2] + coef[-1] * um
    assert np.allclose(basis(mid) @ g, dense, atol=1e-8)


def test_too_few_years():
    with pytest.raises(BasisRankError):
        TPRSBasis(np.arange(5), k=10)


def test_random_effect_rows():
    b = random_effect_block(["A", "B"], ["C", "B"])
    assert b.levels == ["A", "B", "C"]
    assert b.columns[0].tolist() == [1, 0, -1]
    assert b.columns[1].tolist() == [0, 0, 0]
    assert len(b.penalties) == 1 and np.array_equal(b.penalties[0][2], np.eye(3))


def test_random_effect_by_stratum():
    b = random_effect_block(["a1", "b1"], ["a2", "b2"], name="sp",
                            level_strata={"a1": "ins", "a2": "ins", "b1": "plt", "b2": "plt"})
    labels = [p[0] for p in b.penalties]
    assert labels == ["sp[ins]", "sp[plt]"]
    assert [p[2].shape for p in b.penalties] == [(2, 2), (2, 2)]


def test_unseen_level_maps_to_zero():
    b = random_effect_block(["A", "Z"], ["B", "A"], levels=["A", "B"])
    assert b.columns.tolist() == [[1, -1], [-1, 0]]


def design_dataset(n=200, levels=("a", "b", "c", "d"), seed=0):
    rng = np.random.default_rng(seed)
    years = np.sort(rng.integers(1880, 2006, n))
    return make_dataset(rng.normal(size=(n, 2)), rng.normal(size=(n, 2)), years=years,
                        case_labels={"sp": rng.choice(levels, n), "rg": rng.choice(list("xyz"), n)},
                        control_labels={"sp": rng.choice(levels, n), "rg": rng.choice(list("xyz"), n)},
                        names=["climate", "distance"])


def test_assemble_linear_only():
    d = assemble_design(design_dataset(), [TermSpec("climate", "linear", "climate")])
    assert d.d == 1 and d.penalty_blocks == []


def test_assemble_time_varying_k10():
    d = assemble_design(design_dataset(), [TermSpec("distance", "time_varying", "distance", k=10)])
    assert d.d == 10
    assert len(d.penalty_blocks) == 1
    assert d.penalty_blocks[0].S.shape == (10, 10) and d.penalty_blocks[0].rank == 8


def test_simulation_model_column_count():
    ds = design_dataset()
    terms = [TermSpec("climate", "linear", "climate"),
             TermSpec("distance", "time_varying", "distance", k=10),
             TermSpec("species", "random_effect", "sp"),
             TermSpec("region", "random_effect", "rg")]
    d = assemble_design(ds, terms)
    assert d.d == 1 + 10 + 4 + 3
    for pb in d.penalty_blocks:
        ev = np.linalg.eigvalsh(pb.S)
        assert ev.min() >= -1e-10 * ev.max()


def test_missing_column():
    with pytest.raises(SpecError):
        assemble_design(design_dataset(), [TermSpec("zz", "linear", "zz")])
    with pytest.raises(SpecError):
        assemble_design(design_dataset(), [TermSpec("zz", "random_effect", "zz")])


@given(st.integers(0, 10_000))
@settings(max_examples=20, deadline=None)
def test_row_order_invariance(seed):
    ds = design_dataset(n=60, seed=seed % 7)
    terms = [TermSpec("climate", "linear", "climate"),
             TermSpec("distance", "time_varying", "distance", k=5),
             TermSpec("species", "random_effect", "sp")]
    perm = np.random.default_rng(seed).permutation(ds.n_rows)
    a = assemble_design(ds, terms)
    b = assemble_design(ds.subset(perm), terms)
    assert np.allclose(a.X[perm], b.X)
    for pa, pb in zip(a.penalty_blocks, b.penalty_blocks):
        assert np.allclose(pa.S, pb.S)


def test_tv_curve_zero_and_constant():
    ds = design_dataset(n=300)
    terms = [TermSpec("distance", "time_varying", "distance", k=3)]
    fit = fit_smooth_rem(ds, terms)
    fit.gamma_hat = np.zeros(3)
    grid = np.linspace(1880, 2005, 11)
    assert np.all(evaluate_tv_effect(fit, "distance", grid).value == 0)
    fit.gamma_hat = np.array([0.0, 0.7, 0.0])  # constant null-space direction
    assert np.allclose(evaluate_tv_effect(fit, "distance", grid).value, 0.7)
