import csv

import numpy as np
import pytest

from mlio.exceptions import TooFewPoints
from mlio.models import ObservationSet
from mlio.variogram import (
    FITTED_KINDS,
    ExperimentalSemivariogram,
    VariogramFit,
    VariogramKind,
    best_fit,
    build_experimental,
    dump_csv,
    eval_model,
    fit_each_model,
    fit_models,
)


def test_eval_model_practical_range():
    assert eval_model(VariogramFit(kind="spherical", a=0.5, b=2.0), 0.5) == pytest.approx(2.0)
    assert eval_model(VariogramFit(kind="spherical", a=0.5, b=2.0), 3.0) == pytest.approx(2.0)
    assert eval_model(VariogramFit(kind="exponential", a=1.0, b=1.0), 1.0) == pytest.approx(1 - np.exp(-3))
    assert eval_model(VariogramFit(kind="gaussian", a=1.0, b=1.0), 1.0) == pytest.approx(1 - np.exp(-3))
    assert eval_model(VariogramFit(kind="linear", a=1.0, b=1.0), 0.25) == pytest.approx(0.25)


def test_eval_model_origin_and_nugget():
    fit = VariogramFit(kind="exponential", a=0.3, b=1.0, c=0.2)
    assert eval_model(fit, 0.0) == 0.0
    assert eval_model(fit, 1e-12) == pytest.approx(0.2, abs=1e-9)
    gamma = eval_model(fit, np.linspace(0.0, 2.0, 50))
    assert np.all(np.diff(gamma[1:]) >= -1e-15)
    assert np.all(gamma <= fit.b)


def test_eval_model_rejects_negative_lag():
    with pytest.raises(ValueError):
        eval_model(VariogramFit(kind="linear", a=1.0, b=1.0), -0.1)


def test_with_nugget_raises_sill_when_needed():
    fit = VariogramFit(kind="linear", a=1.0, b=0.0).with_nugget(1e-8)
    assert fit.c == 1e-8
    assert fit.b == 1e-8


def test_experimental_matches_pairwise_binning():
    rng = np.random.default_rng(5)
    X = rng.random((12, 2))
    z = rng.normal(size=12)
    exp = build_experimental(ObservationSet(X, z), n_windows=4)

    d = np.linalg.norm(X[:, None, :] - X[None, :, :], axis=2)
    h_max = d.max()
    lags, gammas = [], []
    for i in range(12):
        for k in range(4):
            pairs = [
                (d[i, j], 0.5 * (z[i] - z[j]) ** 2)
                for j in range(12)
                if j != i and min(int(d[i, j] / h_max * 4), 3) == k
            ]
            if pairs:
                lags.append(np.mean([p[0] for p in pairs]))
                gammas.append(np.mean([p[1] for p in pairs]))
    np.testing.assert_allclose(exp.lags, lags)
    np.testing.assert_allclose(exp.gammas, gammas)
    assert exp.h_max == pytest.approx(h_max)


def test_experimental_checks_residual_count():
    with pytest.raises(ValueError):
        build_experimental(ObservationSet(np.array([[0.0], [1.0]]), np.zeros(2)), residuals=np.zeros(1))


def test_experimental_rejects_bad_window_count():
    with pytest.raises(ValueError):
        build_experimental(ObservationSet(np.array([[0.0], [1.0]]), np.zeros(2)), n_windows=0)


def test_observation_set_guards_semivariogram_input():
    with pytest.raises(TooFewPoints):
        build_experimental(ObservationSet(np.array([[0.0]]), np.zeros(1)))


def test_fit_recovers_exponential_model():
    truth = VariogramFit(kind="exponential", a=0.4, b=0.6)
    lags = np.linspace(0.02, 1.0, 40)
    exp = ExperimentalSemivariogram(lags, eval_model(truth, lags), 10, 1.0, 1)
    fits = fit_each_model(exp)
    assert set(fits) == set(FITTED_KINDS)
    best = best_fit(fits)
    assert best.kind == VariogramKind.EXPONENTIAL
    assert best.a == pytest.approx(0.4, rel=1e-4)
    assert best.b == pytest.approx(0.6, rel=1e-4)
    assert best.c <= best.b


def test_fits_respect_bounds():
    rng = np.random.default_rng(2)
    X = rng.random((15, 3))
    exp = build_experimental(ObservationSet(X, rng.normal(scale=0.3, size=15)))
    for fit in fit_each_model(exp).values():
        assert 1e-6 * np.sqrt(3) <= fit.a <= np.sqrt(3) + 1e-12
        assert 0.0 <= fit.c <= fit.b <= 1.0


def test_best_fit_tie_prefers_spherical():
    fits = {k: VariogramFit(kind=k, a=0.5, b=0.5, sse=1.0) for k in reversed(FITTED_KINDS)}
    assert best_fit(fits).kind == VariogramKind.SPHERICAL


def test_zero_residuals_fit_flat_model():
    exp = build_experimental(ObservationSet(np.array([[0.0], [0.5], [1.0]]), np.zeros(3)))
    fit = fit_models(exp)
    assert fit.b == 0.0
    assert fit.sse == 0.0


def test_warm_start_reproduces_previous_fit():
    truth = VariogramFit(kind="spherical", a=0.7, b=0.3)
    lags = np.linspace(0.05, 1.2, 30)
    exp = ExperimentalSemivariogram(lags, eval_model(truth, lags), 10, 1.2, 2)
    first = fit_each_model(exp)
    second = fit_each_model(exp, warm_start=first)
    assert second[VariogramKind.SPHERICAL].sse <= first[VariogramKind.SPHERICAL].sse + 1e-15


def test_dump_csv(tmp_path):
    exp = ExperimentalSemivariogram(np.array([0.1, 0.3]), np.array([0.05, 0.2]), 10, 0.3, 1)
    fit = VariogramFit(kind="spherical", a=0.5, b=0.3)
    path = dump_csv(exp, fit, tmp_path / "vg.csv", n_curve=5)
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    assert len(rows) == 7
    assert rows[0]["gamma_exp"] == repr(0.05)
    assert rows[-1]["gamma_exp"] == ""
    assert {r["kind"] for r in rows} == {"spherical"}
