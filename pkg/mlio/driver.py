"""Multi-level informed optimization on top of the adaptive trainer.

``run_mlio`` builds the initial design around the first provided
[u, p] set, trains the decomposed surrogate with the design-under-uncertainty
greedy operator plugged into the assumption-free layer, and extracts the
design that minimizes the uncertainty measure of the surrogate.
"""

import logging
import math
from dataclasses import dataclass, field
from functools import partial
from typing import Callable, List, Optional

import numpy as np

from mlio.decomposed import DecomposedSurrogate, Layer, ReferenceConfiguration, SamplingPools
from mlio.exceptions import InsufficientInit, NoCandidates
from mlio.meta_opt import GaConfig, ga_maximize, pool_argmax_index
from mlio.models import as_points
from mlio.testbed import ReferencePool, TestProblem, UqOperator, evaluate_normalized, metrics
from mlio.trainer import Evaluator, LedgerEntry, SampleRule, TrainerConfig, TrainerState, next_validation, run_training

logger = logging.getLogger(__name__)

PREDICT_CHUNK = 4096
SETTINGS = (1, 2)


@dataclass
class MlioProblem:
    """Black-box cost over concatenated (u, p) in the unit box."""

    cost: Callable[[np.ndarray], float]
    d_u: int
    d_p: int
    uq: UqOperator
    initial_sets: np.ndarray
    parameter_samples: Optional[np.ndarray] = None
    design_grid: Optional[np.ndarray] = None
    candidates: Optional[np.ndarray] = None
    reference: Optional[ReferencePool] = None
    testbed: Optional[TestProblem] = None
    seed: int = 0

    def __post_init__(self):
        self.uq = UqOperator(self.uq)
        self.initial_sets = as_points(self.initial_sets, self.dim)
        if np.unique(self.initial_sets, axis=0).shape[0] < 2:
            raise InsufficientInit("At least two distinct [u, p] sets are required")
        if self.design_grid is not None:
            self.design_grid = as_points(self.design_grid, self.d_u)
        if self.parameter_samples is not None:
            self.parameter_samples = as_points(self.parameter_samples, self.d_p)
        if self.candidates is not None:
            self.candidates = as_points(self.candidates, self.dim)

    @property
    def dim(self) -> int:
        return self.d_u + self.d_p


@dataclass(frozen=True)
class GreedySubset:
    """Best design of a surrogate with its rows [u_min, p] over all parameter samples."""

    points: np.ndarray
    design: np.ndarray
    design_index: Optional[int]
    uq_estimate: float


@dataclass(frozen=True)
class TracePoint:
    samples: int
    ia: float
    so: float
    uq_estimate: Optional[float] = None
    design_index: Optional[int] = None


@dataclass
class MlioResult:
    u_opt: np.ndarray
    design_index: Optional[int]
    uq_estimate: float
    surrogate: DecomposedSurrogate
    ledger: List[LedgerEntry]
    state: TrainerState
    trace: List[TracePoint] = field(default_factory=list)

    @property
    def termination(self) -> Optional[str]:
        return self.state.termination

    @property
    def n_tot(self) -> int:
        return len(self.ledger)


# -- initialization -----------------------------------------------------------


def _validation_counts(dim: int, setting: int, v_ratio: float, n_free: int):
    n_sep = setting * (dim - 1)
    return math.ceil(setting * v_ratio), math.ceil(n_sep * v_ratio), math.ceil(n_free * v_ratio)


def init_size(dim: int, setting: int = 1, v_ratio: float = 0.5, n_free: int = 1) -> int:
    """Total evaluations of the initial design, pivot included."""
    if setting not in SETTINGS:
        raise ValueError(f"Initialization setting must be one of {SETTINGS}, got {setting}")
    train = 1 + setting * dim + n_free
    return train + sum(_validation_counts(dim, setting, v_ratio, n_free))


def _edge_coords(x_ref: float, setting: int) -> List[float]:
    if setting == 1:
        return [0.0] if x_ref >= 0.5 else [1.0]
    edges = [0.0, 1.0]
    return [0.5 if e == x_ref else e for e in edges]


def build_initialization(
    problem: MlioProblem,
    setting: int = 1,
    cfg: Optional[TrainerConfig] = None,
    evaluator: Optional[Evaluator] = None,
) -> SamplingPools:
    """Reference, edge axis samples, free samples and maximin validation points, all evaluated."""
    cfg = cfg or TrainerConfig()
    dim = problem.dim
    free_sets = problem.initial_sets[1:]
    planned = init_size(dim, setting, cfg.v_ratio, len(free_sets))
    if planned > cfg.n_tot_max:
        raise InsufficientInit(f"Initialization needs {planned} samples but the budget is {cfg.n_tot_max}")
    evaluator = evaluator or Evaluator(problem.cost, dim)

    x_ref = problem.initial_sets[0]
    reference = ReferenceConfiguration(x_ref, evaluator.evaluate(x_ref))
    pools = SamplingPools.around(reference)

    for axis in range(dim):
        for coord in _edge_coords(float(x_ref[axis]), setting):
            point = reference.axis_points(axis, [coord])[0]
            layer = Layer.SYMMETRIC if axis == 0 else Layer.SEPARABLE
            pools = pools.with_axis_sample(axis, coord, evaluator.evaluate(point, layer=int(layer)))
    for point in free_sets:
        pools = pools.with_free_sample(point, evaluator.evaluate(point, layer=int(Layer.FREE)))

    n_sym, n_sep, n_free = _validation_counts(dim, setting, cfg.v_ratio, len(free_sets))
    rng = np.random.default_rng(problem.seed)
    plan = [(Layer.SYMMETRIC, n_sym), (Layer.SEPARABLE, n_sep if dim > 1 else 0), (Layer.FREE, n_free)]
    for layer, count in plan:
        for _ in range(count):
            infill = next_validation(
                DecomposedSurrogate(pools),
                layer,
                candidates=problem.candidates,
                seed=int(rng.integers(2**31 - 1)),
            )
            value = evaluator.evaluate(infill.point, layer=int(layer), rule=SampleRule.VAL)
            if layer == Layer.FREE:
                pools = pools.with_free_sample(infill.point, value, validation=True)
            else:
                pools = pools.with_axis_sample(infill.axis, infill.coord, value, validation=True)

    logger.info(f"Initialization (setting {setting}, D={dim}): {pools.total} samples")
    return pools


# -- greedy design operator -----------------------------------------------------


def _design_rows(designs: np.ndarray, params: np.ndarray) -> np.ndarray:
    u = np.repeat(designs, params.shape[0], axis=0)
    p = np.tile(params, (designs.shape[0], 1))
    return np.hstack([u, p])


def surrogate_uq(surrogate: DecomposedSurrogate, designs, params: np.ndarray, op: UqOperator) -> np.ndarray:
    """UQ of the surrogate mean over ``params`` for every design row."""
    designs = np.asarray(designs, dtype=float)
    designs = designs.reshape(-1, surrogate.dim - params.shape[1])
    n_p = params.shape[0]
    per_chunk = max(1, PREDICT_CHUNK // n_p)
    out = np.empty(designs.shape[0])
    for start in range(0, designs.shape[0], per_chunk):
        block = designs[start : start + per_chunk]
        mean = surrogate.predict_full(_design_rows(block, params))[0]
        out[start : start + block.shape[0]] = UqOperator(op).apply(np.asarray(mean).reshape(block.shape[0], n_p))
    return out


def design_greedy(
    surrogate: DecomposedSurrogate,
    problem: MlioProblem,
    ga: Optional[GaConfig] = None,
    warm_start: Optional[np.ndarray] = None,
) -> GreedySubset:
    """Design minimizing the surrogate's UQ, with its rows over every parameter sample."""
    params = problem.parameter_samples
    if params is None or params.shape[0] == 0:
        raise NoCandidates("Greedy design search needs parameter samples")
    objective = partial(surrogate_uq, surrogate, params=params, op=problem.uq)

    if problem.design_grid is not None:
        if problem.design_grid.shape[0] == 0:
            raise NoCandidates("Design grid is empty")
        index, value = pool_argmax_index(lambda U: -objective(U), problem.design_grid)
        design = problem.design_grid[index].copy()
    else:
        base = ga or GaConfig.unit_box(problem.d_u)
        cfg = base.model_copy(
            update={
                "bounds": [(0.0, 1.0)] * problem.d_u,
                "seed": problem.seed,
                "warm_start": None if warm_start is None else as_points(warm_start, problem.d_u).tolist(),
            }
        )
        design, value = ga_maximize(lambda U: -objective(U), cfg)
        index = None

    points = _design_rows(design[None, :], params)
    return GreedySubset(points=points, design=design, design_index=index, uq_estimate=float(-value))


# -- orchestration --------------------------------------------------------------


class _Tracer:
    """Records IA/SO every ``interval`` consumed samples."""

    def __init__(self, problem: MlioProblem, interval: int, start: int):
        self.problem = problem
        self.interval = interval
        self.trace: List[TracePoint] = [TracePoint(samples=start, ia=1.0, so=1.0)]
        self.next_at = start + interval
        self.last_design: Optional[np.ndarray] = None

    @property
    def enabled(self) -> bool:
        return self.problem.reference is not None

    def record(self, surrogate: DecomposedSurrogate, samples: int, subset: Optional[GreedySubset] = None) -> None:
        if not self.enabled:
            return
        subset = subset or design_greedy(surrogate, self.problem, warm_start=self.last_design)
        self.last_design = subset.design
        u_method = subset.design_index if subset.design_index is not None else subset.design
        ia, so = metrics(self.problem.reference, self.problem.uq, u_method, subset.uq_estimate, self.problem.testbed)
        if self.trace and self.trace[-1].samples == samples:
            self.trace.pop()
        self.trace.append(TracePoint(samples, ia, so, subset.uq_estimate, subset.design_index))
        logger.debug(f"trace @ {samples}: IA={ia:.3e} SO={so:.3e}")

    def __call__(self, surrogate: DecomposedSurrogate, state: TrainerState) -> None:
        samples = len(state.ledger)
        if samples >= self.next_at:
            self.record(surrogate, samples)
            while self.next_at <= samples:
                self.next_at += self.interval


def run_mlio(
    problem: MlioProblem,
    trainer_cfg: Optional[TrainerConfig] = None,
    setting: int = 1,
    trace_interval: int = 25,
) -> MlioResult:
    """Initialize, train with the greedy design operator, and extract the optimum."""
    cfg = trainer_cfg or TrainerConfig(seed=problem.seed)
    evaluator = Evaluator(problem.cost, problem.dim)
    pools = build_initialization(problem, setting, cfg, evaluator)

    tracer = _Tracer(problem, trace_interval, evaluator.n_evaluations)
    last: List[np.ndarray] = []

    def greedy(s: DecomposedSurrogate) -> np.ndarray:
        subset = design_greedy(s, problem, warm_start=last[-1] if last else None)
        last.append(subset.design)
        return subset.points

    surrogate, state = run_training(
        evaluator,
        cfg,
        pools,
        greedy=greedy,
        candidates=problem.candidates,
        on_iteration=tracer if tracer.enabled else None,
    )
    if not surrogate.is_trained(Layer.FREE):
        surrogate = surrogate.retrain_all()

    final = design_greedy(surrogate, problem, warm_start=last[-1] if last else None)
    tracer.record(surrogate, evaluator.n_evaluations, final)
    logger.info(
        f"MLIO finished ({state.termination}) after {evaluator.n_evaluations} samples: "
        f"UQ estimate {final.uq_estimate:.6g}"
    )
    return MlioResult(
        u_opt=final.design,
        design_index=final.design_index,
        uq_estimate=final.uq_estimate,
        surrogate=surrogate,
        ledger=evaluator.ledger,
        state=state,
        trace=tracer.trace if tracer.enabled else [],
    )


def problem_from_testbed(
    prob: TestProblem,
    pool: ReferencePool,
    uq: UqOperator,
    seed: int = 0,
    n_initial: int = 2,
) -> MlioProblem:
    """Benchmark wiring: normalized cost, pool-restricted candidates, random initial sets."""
    candidates = pool.points()
    rng = np.random.default_rng(seed)
    rows = rng.choice(candidates.shape[0], size=n_initial, replace=False)
    return MlioProblem(
        cost=partial(evaluate_normalized, prob),
        d_u=prob.d_u,
        d_p=prob.d_p,
        uq=uq,
        initial_sets=candidates[np.sort(rows)],
        parameter_samples=pool.p_points,
        design_grid=pool.u_points,
        candidates=candidates,
        reference=pool,
        testbed=prob,
        seed=seed,
    )
