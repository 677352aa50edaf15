import numpy as np
import pytest

from mlio.decomposed import (
    DecomposedSurrogate,
    Layer,
    ReferenceConfiguration,
    SamplingPools,
    Variant,
)
from mlio.exceptions import NotTrained
from mlio.kriging import assemble_system, predict_many
from mlio.models import ObservationSet


def build_pools(f, x_ref, sym=(), sep=(), free=(), sym_val=(), sep_val=(), free_val=()):
    """Pools around ``x_ref`` with responses from ``f``; ``sep`` and ``sep_val`` hold one coordinate list per axis."""
    ref = ReferenceConfiguration(np.asarray(x_ref, dtype=float), f(np.asarray(x_ref, dtype=float)))
    pools = SamplingPools.around(ref)
    for c in sym:
        pools = pools.with_axis_sample(0, c, f(ref.axis_points(0, [c])[0]))
    for c in sym_val:
        pools = pools.with_axis_sample(0, c, f(ref.axis_points(0, [c])[0]), validation=True)
    for axis, coords in enumerate(sep, start=1):
        for c in coords:
            pools = pools.with_axis_sample(axis, c, f(ref.axis_points(axis, [c])[0]))
    for axis, coords in enumerate(sep_val, start=1):
        for c in coords:
            pools = pools.with_axis_sample(axis, c, f(ref.axis_points(axis, [c])[0]), validation=True)
    for x in free:
        pools = pools.with_free_sample(x, f(np.asarray(x, dtype=float)))
    for x in free_val:
        pools = pools.with_free_sample(x, f(np.asarray(x, dtype=float)), validation=True)
    return pools


def coupled(x):
    return float(np.sin(3 * x[0]) + x[1] ** 2 + 0.5 * x[0] * x[1])


@pytest.fixture
def coupled_surrogate():
    pools = build_pools(
        coupled,
        [0.3, 0.6],
        sym=[0.0, 1.0, 0.7],
        sep=[[0.0, 1.0, 0.2]],
        free=[[0.8, 0.1], [0.2, 0.9]],
        sym_val=[0.5],
        sep_val=[[0.8]],
        free_val=[[0.6, 0.4]],
    )
    return DecomposedSurrogate(pools).retrain_all()


def test_pool_counts():
    pools = build_pools(coupled, [0.3, 0.6], sym=[0.0], sep=[[1.0]], free=[[0.8, 0.1]], sym_val=[0.5], free_val=[[0.1, 0.1]])
    assert pools.n_sym == 1
    assert pools.n_sep == 1
    assert pools.n_free == 1
    assert pools.n_dkg == 4
    assert pools.v_dkg == 2
    assert pools.total == 6
    assert pools.axis_size(0) == 2
    np.testing.assert_array_equal(pools.axis_taken(0), [0.3, 0.0, 0.5])
    assert pools.union_train()[0].shape == (4, 2)


def test_axis_samples_differ_from_reference_in_one_coordinate():
    pools = build_pools(coupled, [0.3, 0.6], sym=[0.9], sep=[[0.1]])
    X, _ = pools.sep_points(1)
    np.testing.assert_array_equal(X, [[0.3, 0.1]])
    X, _ = pools.sym_points()
    np.testing.assert_array_equal(X, [[0.9, 0.6]])


def test_untrained_layers_raise():
    s = DecomposedSurrogate(build_pools(coupled, [0.3, 0.6], sym=[0.0], sep=[[1.0]], free=[[0.8, 0.1]]))
    with pytest.raises(NotTrained):
        s.predict_full([0.5, 0.5])
    with pytest.raises(NotTrained):
        s.predict_symmetric([0.5, 0.5])


def test_pivot_and_training_points_are_reproduced(coupled_surrogate):
    s = coupled_surrogate
    mean, var = s.predict_full(s.reference.x_ref)
    assert mean == pytest.approx(s.reference.z_ref, rel=1e-8, abs=1e-10)
    assert var <= 1e-8

    U, z = s.pools.union_train()
    means, _ = s.predict_full(U)
    np.testing.assert_allclose(means, z, rtol=1e-8, atol=1e-8)


def test_separable_reproduces_axis_training_points(coupled_surrogate):
    s = coupled_surrogate
    X, z = s.pools.sep_points(1)
    for variant in Variant:
        means, _ = s.predict_separable(X, variant=variant)
        np.testing.assert_allclose(means, z, rtol=1e-8, atol=1e-8)


def test_active_variant_has_smallest_validation_error(coupled_surrogate):
    for layer in (Layer.SEPARABLE, Layer.FREE):
        state = coupled_surrogate.layer(layer)
        other = Variant.DIRECT if state.active == Variant.DELTA else Variant.DELTA
        assert state.val_error[state.active] <= state.val_error[other]


def test_system_count_per_full_update(coupled_surrogate):
    s = coupled_surrogate
    count = sum(len(systems) for layer in Layer for systems in s.layer(layer).systems.values())
    assert count == 2 * s.dim + 1


def test_symmetric_layer_on_symmetric_target():
    def f(x):
        return float(np.sum(np.asarray(x) ** 2))

    pools = build_pools(f, [0.5, 0.5], sym=[0.0, 1.0, 0.25], sep=[[0.0, 1.0]], free=[[0.9, 0.9]])
    s = DecomposedSurrogate(pools).retrain_layer(Layer.SYMMETRIC)
    mean, var = s.predict_symmetric([0.0, 1.0])
    assert mean == pytest.approx(1.0, abs=1e-8)
    assert var <= 1e-10
    assert s.predict_symmetric([0.25, 0.0])[0] == pytest.approx(0.0625, abs=1e-8)

    mean, var = s.predict_symmetric(pools.reference.x_ref)
    assert mean == pytest.approx(pools.reference.z_ref, abs=1e-10)
    assert var <= 1e-10


def test_symmetric_variance_sums_axis_variances():
    def f(x):
        return float(np.sum(np.cos(2 * np.asarray(x))))

    pools = build_pools(f, [0.5, 0.5, 0.5], sym=[0.0, 1.0], sep=[[0.0], [1.0]], free=[[0.1, 0.2, 0.3]])
    s = DecomposedSurrogate(pools).retrain_layer(Layer.SYMMETRIC)
    x = np.array([0.2, 0.7, 0.9])
    _, var = s.predict_symmetric(x)
    _, axis_var = s.axis_prediction(Layer.SYMMETRIC, x, axis=0)
    assert var == pytest.approx(float(np.sum(axis_var)))


def test_batch_and_single_predictions_agree(coupled_surrogate):
    X = np.array([[0.15, 0.35], [0.95, 0.05]])
    means, variances = coupled_surrogate.predict_full(X)
    for i, x in enumerate(X):
        m, v = coupled_surrogate.predict_full(x)
        assert m == pytest.approx(means[i])
        assert v == pytest.approx(variances[i])


def test_constant_target_prefers_delta():
    pools = build_pools(
        lambda x: 0.7,
        [0.4, 0.4],
        sym=[0.0, 1.0],
        sep=[[0.0, 1.0]],
        free=[[0.9, 0.2]],
        sym_val=[0.7],
        sep_val=[[0.7]],
        free_val=[[0.2, 0.8]],
    )
    s = DecomposedSurrogate(pools).retrain_all()
    assert s.layer(Layer.SEPARABLE).active == Variant.DELTA
    assert s.layer(Layer.FREE).active == Variant.DELTA
    assert s.predict_full([0.33, 0.66])[0] == pytest.approx(0.7, abs=1e-8)


def test_one_dimensional_problem_skips_separable_layer():
    def f(x):
        return float(np.sin(4 * x[0]))

    pools = build_pools(f, [0.5], sym=[0.0, 1.0], free=[[0.25]], sym_val=[0.75], free_val=[[0.1]])
    s = DecomposedSurrogate(pools).retrain_all()
    assert s.is_trained(Layer.SEPARABLE)
    U, z = pools.union_train()
    np.testing.assert_allclose(s.predict_full(U)[0], z, atol=1e-8)


def test_retrain_returns_new_snapshot(coupled_surrogate):
    again = coupled_surrogate.retrain_layer(Layer.FREE)
    assert again is not coupled_surrogate
    assert again.layer(Layer.FREE).version == coupled_surrogate.layer(Layer.FREE).version + 1
    assert again.layer(Layer.SEPARABLE) is coupled_surrogate.layer(Layer.SEPARABLE)
    for variant, systems in again.layer(Layer.FREE).systems.items():
        before = coupled_surrogate.layer(Layer.FREE).systems[variant][0].fits
        for kind, fit in systems[0].fits.items():
            assert fit.sse <= before[kind].sse + 1e-12


def test_with_pools_rejects_other_reference(coupled_surrogate):
    other = build_pools(coupled, [0.1, 0.1], sym=[0.0], sep=[[1.0]])
    with pytest.raises(ValueError):
        coupled_surrogate.with_pools(other)


def test_save_and_load(tmp_path, coupled_surrogate):
    path = coupled_surrogate.save(tmp_path / "surrogate.json")
    loaded = DecomposedSurrogate.load(path)
    X = np.random.default_rng(1).random((25, 2))
    np.testing.assert_allclose(loaded.predict_full(X)[0], coupled_surrogate.predict_full(X)[0], rtol=1e-10, atol=1e-12)
    assert loaded.active_mix == coupled_surrogate.active_mix


def test_variogram_dumps(tmp_path, coupled_surrogate):
    written = coupled_surrogate.variogram_dumps(tmp_path / "vg")
    assert len(written) == 2 * coupled_surrogate.dim + 1
    assert all(p.exists() for p in written)


OFF_DIAGONAL = {2: [0.3, 0.6], 3: [0.3, 0.6, 0.2], 4: [0.3, 0.6, 0.2, 0.8]}


def wavy(x):
    x = np.asarray(x, dtype=float)
    return float(np.sin(3 * x[0]) + np.sum(x[1:] ** 2) + 0.4 * np.sum(np.cos(2 * x[1:])))


@pytest.mark.parametrize("dim", [2, 3, 4])
def test_separable_reproduces_axis_points_off_the_diagonal(dim):
    x_ref = OFF_DIAGONAL[dim]
    pools = build_pools(
        wavy,
        x_ref,
        sym=[0.0, 1.0, 0.7],
        sep=[[0.0, 1.0, 0.45]] * (dim - 1),
        sym_val=[0.5],
        sep_val=[[0.9]] * (dim - 1),
    )
    s = DecomposedSurrogate(pools).retrain_layer(Layer.SYMMETRIC).retrain_layer(Layer.SEPARABLE)

    for variant in Variant:
        assert s.predict_separable(x_ref, variant=variant)[0] == pytest.approx(pools.reference.z_ref, abs=1e-8)
        for axis in range(1, dim):
            X, z = pools.sep_points(axis)
            np.testing.assert_allclose(s.predict_separable(X, variant=variant)[0], z, rtol=1e-8, atol=1e-8)

    X, z = pools.sym_points()
    np.testing.assert_allclose(s.predict_separable(X, variant=Variant.DELTA)[0], z, rtol=1e-8, atol=1e-8)


def sum_squares(x):
    x = np.asarray(x, dtype=float)
    return float(np.sum(np.arange(1, x.size + 1) * x**2))


@pytest.mark.parametrize("dim", [2, 3, 4])
def test_separable_recovers_sum_squares(dim):
    grid = [0.0, 0.25, 0.75, 1.0]
    pools = build_pools(
        sum_squares,
        [0.5] * dim,
        sym=grid,
        sep=[grid] * (dim - 1),
        sym_val=[0.125],
        sep_val=[[0.625]] * (dim - 1),
    )
    s = DecomposedSurrogate(pools).retrain_layer(Layer.SYMMETRIC).retrain_layer(Layer.SEPARABLE)
    val_error = s.layer(Layer.SEPARABLE).val_error[Variant.DELTA]
    assert val_error < 0.05

    X = np.random.default_rng(dim).uniform(0.05, 0.95, size=(200, dim))
    truth = np.array([sum_squares(x) for x in X])
    mean, _ = s.predict_separable(X, variant=Variant.DELTA)
    nrmse = np.sqrt(np.mean((mean - truth) ** 2)) / (truth.max() - truth.min())
    assert nrmse < 0.05


def bowl(x):
    return float(np.sum(np.asarray(x, dtype=float) ** 2))


@pytest.mark.parametrize("dim", [2, 3, 4])
def test_corrupted_symmetric_layer_flips_separable_to_direct(dim):
    x_ref = [0.5] * dim
    pools = build_pools(
        bowl,
        x_ref,
        sym=[0.0, 1.0],
        sep=[[0.0, 1.0, 0.25]] * (dim - 1),
        sym_val=[0.3],
        sep_val=[[0.8]] * (dim - 1),
    )
    mislabeled = pools.reference.axis_points(0, [0.8])[0]
    pools = pools.with_axis_sample(0, 0.8, bowl(mislabeled) + 50.0)
    s = DecomposedSurrogate(pools).retrain_all()

    state = s.layer(Layer.SEPARABLE)
    assert state.val_error[Variant.DIRECT] < state.val_error[Variant.DELTA]
    assert s.active_mix[Layer.SEPARABLE] == Variant.DIRECT
    for axis in range(1, dim):
        X, z = pools.sep_points(axis, validation=True)
        np.testing.assert_allclose(s.predict_separable(X)[0], z, atol=0.25)


def rosenbrock(x):
    x = np.asarray(x, dtype=float)
    return float(np.sum(100.0 * (x[1:] - x[:-1] ** 2) ** 2 + (1.0 - x[:-1]) ** 2)) / 100.0


def monolithic(U, z, z_ref, fit, X):
    system = assemble_system(ObservationSet(U, z - z_ref), fit)
    return z_ref + predict_many(system, X)[0]


def slice_grid(x_ref, n=20):
    a, b = np.meshgrid(np.linspace(0.0, 1.0, n), np.linspace(0.0, 1.0, n))
    X = np.repeat(np.asarray(x_ref, dtype=float)[None, :], n * n, axis=0)
    X[:, 0], X[:, 1] = a.ravel(), b.ravel()
    return X


def coupled_pools(f, dim):
    x_ref = OFF_DIAGONAL[dim]
    free = np.random.default_rng(dim).random((5, dim))
    return build_pools(
        f,
        x_ref,
        sym=[0.0, 1.0, 0.7],
        sep=[[0.0, 1.0, 0.45]] * (dim - 1),
        free=free.tolist(),
        sym_val=[0.5],
        sep_val=[[0.9]] * (dim - 1),
        free_val=[[0.5] * dim],
    )


@pytest.mark.parametrize("dim", [2, 3, 4])
def test_direct_full_layer_is_monolithic_kriging(dim):
    pools = coupled_pools(rosenbrock, dim)
    s = DecomposedSurrogate(pools).retrain_all()
    U, z = pools.union_train()
    if dim == 2:
        assert U.shape[0] == 12

    X = slice_grid(pools.reference.x_ref)
    fit = s.layer(Layer.FREE).systems[Variant.DIRECT][0].system.fit
    expected = monolithic(U, z, pools.reference.z_ref, fit, X)
    mean, _ = s.predict_full(X, variant=Variant.DIRECT)
    np.testing.assert_allclose(mean, expected, rtol=1e-6, atol=1e-6 * np.abs(z).max())


@pytest.mark.parametrize("dim", [2, 3, 4])
def test_zero_axis_residuals_make_both_variants_monolithic(dim):
    a = np.asarray(OFF_DIAGONAL[dim])

    def pairwise(x):
        d = np.asarray(x, dtype=float) - a
        return 1.0 + float(sum(d[i] * d[j] for i in range(dim) for j in range(i + 1, dim)))

    pools = coupled_pools(pairwise, dim)
    s = DecomposedSurrogate(pools).retrain_all()
    U, z = pools.union_train()
    X = slice_grid(a)

    np.testing.assert_allclose(s.predict_separable(X)[0], pools.reference.z_ref, atol=1e-12)
    fit = s.layer(Layer.FREE).systems[Variant.DIRECT][0].system.fit
    expected = monolithic(U, z, pools.reference.z_ref, fit, X)
    for variant in Variant:
        np.testing.assert_allclose(s.predict_full(X, variant=variant)[0], expected, rtol=1e-6, atol=1e-8)
