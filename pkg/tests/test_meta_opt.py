import numpy as np
import pytest
from pydantic import ValidationError

from mlio.exceptions import EmptyPool, FitFailure
from mlio.meta_opt import GaConfig, bounded_least_squares, ga_maximize, pool_argmax, pool_argmax_index


def test_ga_finds_interior_optimum():
    target = np.array([0.3, 0.7])
    x, value = ga_maximize(lambda X: -np.sum((X - target) ** 2, axis=1), GaConfig.unit_box(2, seed=1))
    assert np.linalg.norm(x - target) < 1e-2
    assert value <= 0.0


def test_ga_is_deterministic_and_feasible():
    def objective(X):
        return np.sin(7 * X[:, 0]) * np.cos(5 * X[:, 1])

    cfg = GaConfig(bounds=[(0.0, 1.0), (-2.0, 3.0)], population=20, generations=15, seed=4)
    a = ga_maximize(objective, cfg)
    b = ga_maximize(objective, cfg)
    np.testing.assert_array_equal(a[0], b[0])
    assert a[1] == b[1]
    assert 0.0 <= a[0][0] <= 1.0 and -2.0 <= a[0][1] <= 3.0


def test_ga_constant_objective():
    _, value = ga_maximize(lambda X: np.full(X.shape[0], 2.5), GaConfig.unit_box(3, population=8, generations=3))
    assert value == 2.5


def test_ga_warm_start_is_kept_by_elitism():
    optimum = [0.123, 0.456]

    def objective(X):
        return -np.sum((X - optimum) ** 2, axis=1)

    cfg = GaConfig.unit_box(2, population=10, generations=5, seed=9, warm_start=[optimum])
    _, value = ga_maximize(objective, cfg)
    assert value >= 0.0


def test_ga_config_validation():
    with pytest.raises(ValidationError):
        GaConfig(bounds=[(1.0, 0.0)])
    with pytest.raises(ValidationError):
        GaConfig.unit_box(2, population=3)
    with pytest.raises(ValidationError):
        GaConfig.unit_box(2, warm_start=[[0.5]])


def test_pool_argmax():
    rng = np.random.default_rng(0)
    pool = rng.random((1000, 3))
    weights = np.array([1.0, -2.0, 0.5])
    point, value = pool_argmax(lambda X: X @ weights, pool)
    scores = pool @ weights
    assert value == scores.max()
    np.testing.assert_array_equal(point, pool[np.argmax(scores)])


def test_pool_argmax_ties_and_exclusion():
    pool = np.array([[0.0], [1.0], [1.0], [0.5]])
    assert pool_argmax_index(lambda X: X[:, 0], pool) == (1, 1.0)
    assert pool_argmax_index(lambda X: X[:, 0], pool, exclude=[False, True, False, False]) == (2, 1.0)
    point, _ = pool_argmax(lambda X: X[:, 0], pool[:1])
    np.testing.assert_array_equal(point, [0.0])


def test_pool_argmax_empty():
    with pytest.raises(EmptyPool):
        pool_argmax(lambda X: X[:, 0], np.empty((0, 2)))
    with pytest.raises(EmptyPool):
        pool_argmax_index(lambda X: X[:, 0], np.ones((2, 1)), exclude=[True, True])


def test_least_squares_zero_residual_returns_init():
    init = np.array([0.2, 0.4])
    out = bounded_least_squares(lambda t: np.zeros(3), ([0, 0], [1, 1]), init)
    np.testing.assert_array_equal(out, init)


def test_least_squares_interior_vertex():
    out = bounded_least_squares(lambda t: np.array([t[0] - 0.37]), ([0.0], [1.0]), [0.9])
    assert out[0] == pytest.approx(0.37, abs=1e-8)


def test_least_squares_clamps_to_bound():
    out = bounded_least_squares(lambda t: np.array([t[0] - 2.0, 0.5 * (t[0] - 3.0)]), ([0.0], [1.0]), [0.5])
    assert out[0] == pytest.approx(1.0, abs=1e-8)


def test_least_squares_fixed_parameter():
    out = bounded_least_squares(lambda t: t - np.array([0.5, 0.2]), ([0.3, 0.0], [0.3, 1.0]), [0.3, 0.9])
    assert out[0] == 0.3
    assert out[1] == pytest.approx(0.2, abs=1e-8)


def test_least_squares_infeasible_init():
    with pytest.raises(FitFailure):
        bounded_least_squares(lambda t: t, ([0.0], [1.0]), [2.0])
