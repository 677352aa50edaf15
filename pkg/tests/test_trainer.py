import numpy as np
import pytest
from pydantic import ValidationError

from mlio.decomposed import DecomposedSurrogate, Layer, ReferenceConfiguration, SamplingPools
from mlio.exceptions import BlackBoxFailure, CapReached, EmptySubset, EmptyValidation
from mlio.meta_opt import GaConfig
from mlio.trainer import (
    BUDGET_EXHAUSTED,
    QUALITY_MET,
    ErrorRecord,
    Evaluator,
    SampleRule,
    TrainerConfig,
    compute_errors,
    greedy_step,
    next_exploration,
    next_validation,
    run_training,
    variance_search,
)

SMALL_GA = GaConfig.unit_box(1, population=30, generations=30, seed=3)
Z95 = 1.959963984540054


def smooth(x):
    x = np.asarray(x, dtype=float)
    return float(np.sin(2.0 * x[0]) + x[1] ** 2 + 0.3 * x[0] * x[1])


def initial_pools(f, x_ref=(0.2, 0.3)):
    ref = ReferenceConfiguration(np.asarray(x_ref, dtype=float), f(x_ref))
    pools = SamplingPools.around(ref)
    pools = pools.with_axis_sample(0, 1.0, f(ref.axis_points(0, [1.0])[0]))
    pools = pools.with_axis_sample(1, 1.0, f(ref.axis_points(1, [1.0])[0]))
    pools = pools.with_free_sample([0.8, 0.9], f([0.8, 0.9]))
    pools = pools.with_axis_sample(0, 0.6, f(ref.axis_points(0, [0.6])[0]), validation=True)
    pools = pools.with_axis_sample(1, 0.65, f(ref.axis_points(1, [0.65])[0]), validation=True)
    pools = pools.with_free_sample([0.5, 0.1], f([0.5, 0.1]), validation=True)
    return pools


@pytest.fixture
def trained():
    return DecomposedSurrogate(initial_pools(smooth)).retrain_all()


class CountingCost:
    def __init__(self, f):
        self.f = f
        self.calls = 0

    def __call__(self, x):
        self.calls += 1
        return self.f(x)


def test_config_validation():
    with pytest.raises(ValidationError):
        TrainerConfig(v_ratio=0.0)
    with pytest.raises(ValidationError):
        TrainerConfig(tau_val=0.0)
    with pytest.raises(ValidationError):
        TrainerConfig(g_ratio=-0.1)
    assert TrainerConfig(v_ratio=0.5).validation_period == 2
    assert TrainerConfig(v_ratio=0.3).validation_period == 4
    assert TrainerConfig().min_validation(7) == 7


def test_evaluator_memoizes_and_records():
    cost = CountingCost(lambda x: float(np.sum(x)))
    ev = Evaluator(cost, 2)
    assert ev([0.1, 0.2], rule=SampleRule.VAL) == pytest.approx(0.3)
    assert ev(np.array([0.1, 0.2])) == pytest.approx(0.3)
    assert cost.calls == 1
    assert ev.n_evaluations == 1
    assert ev.ledger[0].kind == SampleRule.VAL
    assert ev.ledger[0].n_tot == 1
    ev.register([0.5, 0.5], 9.0)
    assert ev([0.5, 0.5]) == 9.0
    assert cost.calls == 1


def test_evaluator_wraps_failures():
    def broken(x):
        raise RuntimeError("solver crashed")

    ev = Evaluator(broken, 1)
    with pytest.raises(BlackBoxFailure) as info:
        ev([0.4])
    np.testing.assert_array_equal(info.value.location, [0.4])
    with pytest.raises(BlackBoxFailure):
        Evaluator(lambda x: float("nan"), 1)([0.2])
    assert ev.n_evaluations == 0


def test_error_record():
    cfg = TrainerConfig(tau_val=0.1, tau_ci=0.1)
    record = ErrorRecord().with_layer(Layer.SEPARABLE, 0.05, 0.2)
    assert record.eps_val[1] == 0.05
    assert record.unmet(Layer.SEPARABLE, cfg)
    assert not record.with_layer(Layer.SEPARABLE, 0.05, 0.05).unmet(Layer.SEPARABLE, cfg)
    assert record.unmet(Layer.SYMMETRIC, cfg)
    assert len(record.as_row()) == 6


def test_axis_validation_is_interval_maximin():
    f = smooth
    ref = ReferenceConfiguration(np.array([0.0, 0.5]), f([0.0, 0.5]))
    pools = SamplingPools.around(ref).with_axis_sample(0, 1.0, 1.0)
    infill = next_validation(DecomposedSurrogate(pools), Layer.SYMMETRIC)
    assert infill.coord == pytest.approx(0.5)
    np.testing.assert_allclose(infill.point, [0.5, 0.5])

    pools = pools.with_axis_sample(0, 0.4, 1.0, validation=True)
    assert next_validation(DecomposedSurrogate(pools), Layer.SYMMETRIC).coord == pytest.approx(0.7)


def test_axis_validation_reaches_box_edges():
    ref = ReferenceConfiguration(np.array([0.3, 0.5]), 0.0)
    pools = SamplingPools.around(ref)
    assert next_validation(DecomposedSurrogate(pools), Layer.SYMMETRIC).coord == 1.0


def test_separable_validation_picks_sparsest_axis():
    ref = ReferenceConfiguration(np.array([0.5, 0.5, 0.5]), 0.0)
    pools = SamplingPools.around(ref)
    pools = pools.with_axis_sample(1, 0.0, 0.0).with_axis_sample(1, 1.0, 0.0)
    pools = pools.with_axis_sample(2, 0.0, 0.0)
    infill = next_validation(DecomposedSurrogate(pools), Layer.SEPARABLE)
    assert infill.axis == 2
    assert infill.coord == 1.0


def test_free_validation_with_candidates(trained):
    candidates = np.random.default_rng(4).random((200, 2))
    infill = next_validation(trained, Layer.FREE, candidates=candidates)
    taken = trained.pools.all_points()
    nearest = np.min(np.linalg.norm(candidates[:, None, :] - taken[None, :, :], axis=2), axis=1)
    np.testing.assert_array_equal(infill.point, candidates[np.argmax(nearest)])
    assert infill.score == pytest.approx(nearest.max())


def test_validation_respects_caps(trained):
    with pytest.raises(CapReached):
        next_validation(trained, Layer.SYMMETRIC, n_ss_max=2)


def test_symmetric_exploration_matches_dense_scan(trained):
    infill = next_exploration(trained, Layer.SYMMETRIC, ga=SMALL_GA)
    grid = np.linspace(0.0, 1.0, 4001)
    taken = trained.pools.axis_taken(0)
    grid = grid[np.min(np.abs(grid[:, None] - taken[None, :]), axis=1) > 1e-9]
    scan = trained.axis_prediction(Layer.SYMMETRIC, grid, axis=0)[1]
    assert infill.score >= 0.99 * scan.max()
    assert infill.axis == 0
    assert infill.coord not in taken
    np.testing.assert_allclose(infill.point[1:], trained.reference.x_ref[1:])


def test_separable_exploration_takes_best_uncapped_axis():
    def f(x):
        return float(np.sum(np.cos(3.0 * np.asarray(x))))

    ref = ReferenceConfiguration(np.array([0.5, 0.5, 0.5]), f([0.5, 0.5, 0.5]))
    pools = SamplingPools.around(ref).with_axis_sample(0, 0.0, f([0.0, 0.5, 0.5]))
    for coord in (0.0, 0.25, 0.75, 1.0):
        pools = pools.with_axis_sample(1, coord, f([0.5, coord, 0.5]))
    pools = pools.with_axis_sample(2, 1.0, f([0.5, 0.5, 1.0]))
    pools = pools.with_free_sample([0.1, 0.9, 0.2], f([0.1, 0.9, 0.2]))
    s = DecomposedSurrogate(pools).retrain_layer(Layer.SYMMETRIC).retrain_layer(Layer.SEPARABLE)

    search = variance_search(s, Layer.SEPARABLE, ga=SMALL_GA)
    assert [r.axis for r in search] == [1, 2]
    best = next_exploration(s, Layer.SEPARABLE, search=search)
    assert best.axis == max(search, key=lambda r: r.score).axis

    capped = next_exploration(s, Layer.SEPARABLE, search=search, n_ss_max=4)
    assert capped.axis == 2
    with pytest.raises(CapReached):
        next_exploration(s, Layer.SEPARABLE, search=search, n_ss_max=1)


def test_free_exploration_is_pool_argmax(trained):
    candidates = np.vstack([np.random.default_rng(8).random((300, 2)), trained.pools.all_points()])
    infill = next_exploration(trained, Layer.FREE, candidates=candidates)
    var = trained.layer_variance(Layer.FREE, candidates)
    var[300:] = -np.inf
    np.testing.assert_array_equal(infill.point, candidates[np.argmax(var)])


def test_compute_errors_matches_definitions(trained):
    candidates = np.random.default_rng(2).random((150, 2))
    errors = compute_errors(trained, ga=SMALL_GA, candidates=candidates)

    state = trained.layer(Layer.FREE)
    assert errors.eps_val[2] == state.val_error[state.active]

    var = trained.layer_variance(Layer.FREE, candidates)
    value_range = trained.pools.value_range(Layer.FREE)
    assert errors.eps_ci[2] == pytest.approx(Z95 * np.sqrt(var.max()) / value_range, rel=1e-9)


def test_compute_errors_needs_validation():
    f = smooth
    ref = ReferenceConfiguration(np.array([0.2, 0.3]), f([0.2, 0.3]))
    pools = SamplingPools.around(ref)
    pools = pools.with_axis_sample(0, 1.0, 0.5).with_axis_sample(1, 1.0, 0.5).with_free_sample([0.7, 0.7], 0.1)
    s = DecomposedSurrogate(pools).retrain_all()
    with pytest.raises(EmptyValidation):
        compute_errors(s, ga=SMALL_GA)


def test_greedy_step(trained):
    single = greedy_step(trained, lambda s: np.array([[0.45, 0.55]]))
    np.testing.assert_array_equal(single.point, [0.45, 0.55])

    row = np.column_stack([np.full(20, 0.35), np.linspace(0.0, 1.0, 20)])
    chosen = greedy_step(trained, lambda s: row)
    var = trained.layer_variance(Layer.FREE, row)
    np.testing.assert_array_equal(chosen.point, row[np.argmax(var)])

    with pytest.raises(EmptySubset):
        greedy_step(trained, lambda s: np.empty((0, 2)))


def small_config(**kwargs):
    base = dict(n_tot_max=22, ga_population=12, ga_generations=6, seed=5)
    base.update(kwargs)
    return TrainerConfig(**base)


def test_run_training_budget_honesty():
    cost = CountingCost(smooth)
    pools = initial_pools(smooth)
    surrogate, state = run_training(cost, small_config(), pools)

    assert state.termination in (QUALITY_MET, BUDGET_EXHAUSTED)
    assert len(state.ledger) <= 22
    assert cost.calls == len(state.ledger) - pools.total
    points = {entry.point for entry in state.ledger}
    assert len(points) == len(state.ledger)
    assert surrogate.pools.total == len(state.ledger)
    assert len(state.error_history) == state.iter
    assert set(state.visits) <= {0, 1, 2, 3}


def test_run_training_is_deterministic():
    a = run_training(smooth, small_config(), initial_pools(smooth))[1]
    b = run_training(smooth, small_config(), initial_pools(smooth))[1]
    assert [(e.kind, e.point, e.value) for e in a.ledger] == [(e.kind, e.point, e.value) for e in b.ledger]


def test_constant_target_meets_quality_immediately():
    def flat(x):
        return 0.4

    pools = initial_pools(flat)
    cost = CountingCost(flat)
    _, state = run_training(cost, small_config(), pools)
    assert state.termination == QUALITY_MET
    assert cost.calls == 0
    assert state.iter == 1


def test_greedy_ratio_is_respected():
    candidates = np.random.default_rng(0).random((120, 2))
    row = candidates[:10]
    cfg = small_config(n_tot_max=30, g_ratio=0.5)
    surrogate, state = run_training(smooth, cfg, initial_pools(smooth), greedy=lambda s: row, candidates=candidates)

    explorative = surrogate.pools.n_free - state.greedy_count
    assert state.greedy_count <= cfg.g_ratio * explorative + 1
    greedy_points = [e.point for e in state.ledger if e.kind == SampleRule.GREEDY]
    assert all(any(np.allclose(p, r) for r in row) for p in greedy_points)


def test_zero_greedy_ratio_never_exploits():
    candidates = np.random.default_rng(1).random((80, 2))
    cfg = small_config(g_ratio=0.0)
    _, state = run_training(smooth, cfg, initial_pools(smooth), greedy=lambda s: candidates[:5], candidates=candidates)
    assert state.greedy_count == 0
    assert all(e.kind != SampleRule.GREEDY for e in state.ledger)


def test_exhausted_candidates_do_not_count_as_converged():
    pools = initial_pools(smooth)
    cost = CountingCost(smooth)
    cfg = small_config(tau_val=1e6, tau_ci=1e6)
    _, state = run_training(cost, cfg, pools, candidates=pools.all_points())

    assert state.termination == BUDGET_EXHAUSTED
    assert state.errors.eps_ci[2] == np.inf
    assert cost.calls == 0
    assert state.iter == 4


def test_separable_validation_on_requested_axis():
    ref = ReferenceConfiguration(np.array([0.5, 0.5, 0.5]), 0.0)
    pools = SamplingPools.around(ref)
    pools = pools.with_axis_sample(1, 0.0, 0.0).with_axis_sample(1, 1.0, 0.0)
    pools = pools.with_axis_sample(2, 0.0, 0.0)
    s = DecomposedSurrogate(pools)

    infill = next_validation(s, Layer.SEPARABLE, axis=1)
    assert infill.axis == 1
    assert infill.coord == pytest.approx(0.25)
    with pytest.raises(CapReached):
        next_validation(s, Layer.SEPARABLE, axis=1, n_ss_max=2)


def wavy(x):
    x = np.asarray(x, dtype=float)
    return float(np.sin(3.0 * x[0]) + x[1] ** 2 + 0.4 * np.cos(2.0 * x[2]) + 0.2 * x[0] * x[2])


def initial_pools_3d(f, x_ref=(0.3, 0.6, 0.2)):
    ref = ReferenceConfiguration(np.asarray(x_ref, dtype=float), f(x_ref))
    pools = SamplingPools.around(ref)
    for axis, coord in ((0, 1.0), (1, 0.0), (2, 1.0)):
        pools = pools.with_axis_sample(axis, coord, f(ref.axis_points(axis, [coord])[0]))
    pools = pools.with_free_sample([0.8, 0.1, 0.9], f([0.8, 0.1, 0.9]))
    for axis, coord in ((0, 0.65), (1, 0.9), (2, 0.55)):
        pools = pools.with_axis_sample(axis, coord, f(ref.axis_points(axis, [coord])[0]), validation=True)
    pools = pools.with_free_sample([0.5, 0.5, 0.5], f([0.5, 0.5, 0.5]), validation=True)
    return pools


def test_separable_validation_follows_the_sampled_axis():
    pools = initial_pools_3d(wavy)
    x_ref = pools.reference.x_ref
    cfg = small_config(n_tot_max=40, tau_val=1e-12, tau_ci=1e-12)
    _, state = run_training(wavy, cfg, pools)

    def axis_of(point):
        return int(np.flatnonzero(np.asarray(point) != x_ref)[0])

    ledger = state.ledger
    checked = 0
    for before, entry in zip(ledger, ledger[1:]):
        if entry.layer == Layer.SEPARABLE and entry.kind == SampleRule.VAL:
            assert before.layer == Layer.SEPARABLE and before.kind == SampleRule.TRAIN
            assert axis_of(entry.point) == axis_of(before.point)
            checked += 1
    assert checked > 0


def test_history_records_every_iteration():
    pools = initial_pools(smooth)
    surrogate, state = run_training(smooth, small_config(), pools)

    assert len(state.history) == state.iter
    assert [h.iter for h in state.history] == list(range(1, state.iter + 1))
    last = state.history[-1]
    assert last.counts == surrogate.pools.counts()
    assert last.n_tot == len(state.ledger)
    assert set(last.layers) == {"1", "2", "3"}
    for layer in last.layers.values():
        assert layer["active"] in ("delta", "direct")
        for fits in layer["fits"].values():
            assert all(fit["kind"] in ("spherical", "exponential", "gaussian") for fit in fits)
    assert len(last.layers["2"]["fits"]["delta"]) == surrogate.dim - 1
    assert last.to_dict()["eps_val"] == list(last.errors.eps_val)
