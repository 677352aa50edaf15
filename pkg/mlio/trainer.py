"""Adaptive training of the decomposed surrogate.

The loop visits the layers cyclically (symmetric, separable, assumption-free),
skipping layers whose validation and confidence errors already meet the
thresholds or that reached their size cap. Each visit adds one training
point where the layer's prediction variance is largest, plus a validation
point placed by maximin whenever the validation ratio asks for one. At the
assumption-free layer a greedy operator may replace exploration at a fixed
ratio.
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field

from mlio.decomposed import DecomposedSurrogate, Layer, SamplingPools
from mlio.exceptions import (
    BlackBoxFailure,
    CapReached,
    DuplicateCandidate,
    EmptyPool,
    EmptySubset,
    EmptyValidation,
)
from mlio.kriging import ci_half_width
from mlio.meta_opt import GaConfig, ga_maximize, pool_argmax_index
from mlio.models import as_points
from mlio.store import NearestNeighborTracker

logger = logging.getLogger(__name__)

# Coordinates closer than this are treated as the same sample.
DUPLICATE_RADIUS = 1e-9
QUALITY_MET = "quality-met"
BUDGET_EXHAUSTED = "budget-exhausted"
# A full cursor cycle without a new evaluation ends the run.
MAX_IDLE_ITERATIONS = 4

GreedyOperator = Callable[[DecomposedSurrogate], np.ndarray]


class TrainerConfig(BaseModel):
    """Thresholds, ratios and budgets of the training loop."""

    v_ratio: float = Field(default=0.5, gt=0.0, le=1.0)
    g_ratio: float = Field(default=0.5, ge=0.0)
    tau_val: float = Field(default=1e-3, gt=0.0)
    tau_ci: float = Field(default=1e-2, gt=0.0)
    n_tot_max: int = Field(default=1000, gt=0)
    n_ss_max: int = Field(default=100, gt=1)
    v_min: Optional[int] = Field(default=None, ge=0)
    ci_probability: float = Field(default=0.95, gt=0.0, lt=1.0)
    n_windows: int = Field(default=10, ge=1)
    ga_population: int = Field(default=100, ge=4)
    ga_generations: int = Field(default=100, ge=0)
    seed: int = 0

    @property
    def validation_period(self) -> int:
        return math.ceil(1.0 / self.v_ratio)

    def min_validation(self, dim: int) -> int:
        return dim if self.v_min is None else self.v_min


class SampleRule(str, Enum):
    TRAIN = "train"
    VAL = "val"
    GREEDY = "greedy"


@dataclass(frozen=True)
class ErrorRecord:
    """Validation and confidence errors of the three layers."""

    eps_val: Tuple[float, float, float] = (math.inf, math.inf, math.inf)
    eps_ci: Tuple[float, float, float] = (math.inf, math.inf, math.inf)

    def with_layer(self, layer: Layer, eps_val: float, eps_ci: float) -> "ErrorRecord":
        i = int(layer) - 1
        val, ci = list(self.eps_val), list(self.eps_ci)
        val[i], ci[i] = float(eps_val), float(eps_ci)
        return ErrorRecord(tuple(val), tuple(ci))

    def unmet(self, layer: Layer, cfg: TrainerConfig) -> bool:
        i = int(layer) - 1
        return self.eps_val[i] > cfg.tau_val or self.eps_ci[i] > cfg.tau_ci

    def as_row(self) -> List[float]:
        return [*self.eps_val, *self.eps_ci]


@dataclass(frozen=True)
class LedgerEntry:
    iter: int
    layer: int
    kind: SampleRule
    point: Tuple[float, ...]
    value: float
    errors: ErrorRecord
    n_tot: int


@dataclass(frozen=True)
class Infill:
    """A proposed sample: full point, score, and its axis for layers 1-2."""

    layer: Layer
    point: np.ndarray
    score: float
    axis: Optional[int] = None

    @property
    def coord(self) -> Optional[float]:
        return None if self.axis is None else float(self.point[self.axis])


class Evaluator:
    """Black-box wrapper that memoizes by exact coordinates and keeps the ledger."""

    def __init__(self, cost: Callable[[np.ndarray], float], dim: int):
        self.cost = cost
        self.dim = dim
        self.ledger: List[LedgerEntry] = []
        self._memo: Dict[bytes, float] = {}

    @property
    def n_evaluations(self) -> int:
        return len(self.ledger)

    def seen(self, point) -> bool:
        return np.asarray(point, dtype=float).reshape(-1).tobytes() in self._memo

    def _record(self, x: np.ndarray, value: float, iteration: int, layer: int, rule: SampleRule, errors: ErrorRecord) -> None:
        self._memo[x.tobytes()] = value
        self.ledger.append(
            LedgerEntry(iteration, layer, rule, tuple(float(v) for v in x), value, errors, len(self.ledger) + 1)
        )

    def register(
        self,
        point,
        value: float,
        iteration: int = 0,
        layer: int = 0,
        rule: SampleRule = SampleRule.TRAIN,
        errors: ErrorRecord = ErrorRecord(),
    ) -> None:
        """Record a response obtained outside this evaluator."""
        x = np.asarray(point, dtype=float).reshape(-1)
        if x.tobytes() not in self._memo:
            self._record(x, float(value), iteration, layer, rule, errors)

    def evaluate(
        self,
        point,
        iteration: int = 0,
        layer: int = 0,
        rule: SampleRule = SampleRule.TRAIN,
        errors: ErrorRecord = ErrorRecord(),
    ) -> float:
        x = np.asarray(point, dtype=float).reshape(-1).copy()
        if x.size != self.dim:
            raise ValueError(f"Expected a {self.dim}-dimensional point, got {x.size}")
        key = x.tobytes()
        if key in self._memo:
            return self._memo[key]
        try:
            value = float(self.cost(x))
        except Exception as e:
            raise BlackBoxFailure(x, e) from e
        if not math.isfinite(value):
            raise BlackBoxFailure(x, ValueError(f"non-finite response {value}"))
        self._record(x, value, iteration, layer, rule, errors)
        return value

    __call__ = evaluate


@dataclass(frozen=True)
class IterationSnapshot:
    """Surrogate state at the end of one iteration."""

    iter: int
    visited: int
    n_tot: int
    counts: Dict[str, int]
    layers: Dict[str, Dict[str, Any]]
    errors: ErrorRecord
    greedy_design: Optional[Tuple[float, ...]] = None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "iter": self.iter,
            "visited": self.visited,
            "n_tot": self.n_tot,
            "counts": dict(self.counts),
            "layers": self.layers,
            "eps_val": list(self.errors.eps_val),
            "eps_ci": list(self.errors.eps_ci),
            "greedy_design": None if self.greedy_design is None else list(self.greedy_design),
        }


@dataclass
class TrainerState:
    iter: int = 0
    next: int = 0
    greedy_count: int = 0
    errors: ErrorRecord = field(default_factory=ErrorRecord)
    ledger: List[LedgerEntry] = field(default_factory=list)
    error_history: List[Tuple[int, ErrorRecord]] = field(default_factory=list)
    visits: List[int] = field(default_factory=list)
    greedy_designs: List[Tuple[int, Tuple[float, ...]]] = field(default_factory=list)
    history: List[IterationSnapshot] = field(default_factory=list)
    termination: Optional[str] = None


# -- infill searches ----------------------------------------------------------


def _ga_config(ga: Optional[GaConfig], dim: int, seed: int, warm: Optional[Sequence] = None) -> GaConfig:
    base = ga or GaConfig.unit_box(dim)
    return base.model_copy(update={"bounds": [(0.0, 1.0)] * dim, "seed": seed, "warm_start": warm})


def _axis_search(
    s: DecomposedSurrogate,
    layer: Layer,
    axis: int,
    ga: Optional[GaConfig],
    seed: int,
) -> Infill:
    """Maximum 1-D variance along one axis, away from the axis' occupied coordinates."""
    taken = s.pools.axis_taken(axis)

    def objective(T: np.ndarray) -> np.ndarray:
        var = s.axis_prediction(layer, T[:, 0], axis=axis)[1]
        near = np.min(np.abs(T[:, 0][:, None] - taken[None, :]), axis=1) <= DUPLICATE_RADIUS
        return np.where(near, -np.inf, var)

    t, score = ga_maximize(objective, _ga_config(ga, 1, seed))
    if not math.isfinite(score):
        raise DuplicateCandidate(f"No free coordinate along axis {axis}")
    point = s.reference.axis_points(axis, [t[0]])[0]
    return Infill(layer, point, score, axis)


def _sampled_mask(s: DecomposedSurrogate, candidates: np.ndarray) -> np.ndarray:
    taken = {row.tobytes() for row in s.pools.all_points()}
    return np.array([row.tobytes() in taken for row in candidates], dtype=bool)


def variance_search(
    s: DecomposedSurrogate,
    layer: Layer,
    *,
    ga: Optional[GaConfig] = None,
    candidates: Optional[np.ndarray] = None,
    seed: int = 0,
) -> List[Infill]:
    """Maximum-variance point of a layer; layer 2 yields one result per dimension."""
    layer = Layer(layer)
    if layer == Layer.SYMMETRIC:
        return [_axis_search(s, layer, 0, ga, seed)]
    if layer == Layer.SEPARABLE:
        return [_axis_search(s, layer, axis, ga, seed + axis) for axis in range(1, s.dim)]

    if candidates is not None:
        exclude = _sampled_mask(s, candidates)
        try:
            idx, score = pool_argmax_index(lambda X: s.layer_variance(Layer.FREE, X), candidates, exclude)
        except EmptyPool as e:
            raise DuplicateCandidate("Every candidate is already sampled") from e
        return [Infill(layer, candidates[idx].copy(), score)]

    taken = s.pools.all_points()

    def objective(X: np.ndarray) -> np.ndarray:
        var = s.layer_variance(Layer.FREE, X)
        near = np.min(np.linalg.norm(X[:, None, :] - taken[None, :, :], axis=2), axis=1) <= DUPLICATE_RADIUS
        return np.where(near, -np.inf, var)

    x, score = ga_maximize(objective, _ga_config(ga, s.dim, seed))
    if not math.isfinite(score):
        raise DuplicateCandidate("GA found no unsampled point")
    return [Infill(layer, x, score)]


def _uncapped_axes(s: DecomposedSurrogate, layer: Layer, n_ss_max: Optional[int]) -> List[int]:
    axes = [0] if layer == Layer.SYMMETRIC else list(range(1, s.dim))
    if n_ss_max is None:
        return axes
    return [a for a in axes if s.pools.axis_size(a) < n_ss_max]


def next_exploration(
    s: DecomposedSurrogate,
    layer: Layer,
    *,
    ga: Optional[GaConfig] = None,
    candidates: Optional[np.ndarray] = None,
    n_ss_max: Optional[int] = None,
    seed: int = 0,
    search: Optional[List[Infill]] = None,
) -> Infill:
    """Where the layer's prediction variance is largest.

    ``search`` reuses a ``variance_search`` result computed on the same
    snapshot. Layer 2 takes the best dimension among those below the cap.
    """
    layer = Layer(layer)
    s.layer(layer)
    if layer != Layer.FREE:
        axes = _uncapped_axes(s, layer, n_ss_max)
        if not axes:
            raise CapReached(f"Layer {int(layer)} reached its cap of {n_ss_max} points per dimension")
    results = search if search is not None else variance_search(s, layer, ga=ga, candidates=candidates, seed=seed)
    if layer == Layer.FREE:
        return results[0]
    eligible = [r for r in results if r.axis in axes]
    best = max(eligible, key=lambda r: r.score)
    return best


def _interval_maximin(taken: np.ndarray) -> Tuple[float, float]:
    """Point of [0, 1] farthest from ``taken``; ties go to the lowest coordinate."""
    pts = np.unique(np.clip(taken, 0.0, 1.0))
    options = [(pts[0], 0.0), (1.0 - pts[-1], 1.0)]
    gaps = np.diff(pts)
    options += [(g / 2.0, (a + b) / 2.0) for g, a, b in zip(gaps, pts[:-1], pts[1:])]
    distance = max(d for d, _ in options)
    coord = min(c for d, c in options if d == distance)
    return float(coord), float(distance)


def next_validation(
    s: DecomposedSurrogate,
    layer: Layer,
    *,
    ga: Optional[GaConfig] = None,
    candidates: Optional[np.ndarray] = None,
    tracker: Optional[NearestNeighborTracker] = None,
    n_ss_max: Optional[int] = None,
    seed: int = 0,
    axis: Optional[int] = None,
) -> Infill:
    """Maximin validation point: 1-D along the axes for layers 1-2, full space for layer 3.

    ``axis`` restricts layer 2 to one dimension; otherwise the sparsest
    uncapped dimension is used.
    """
    layer = Layer(layer)
    if layer != Layer.FREE:
        axes = _uncapped_axes(s, layer, n_ss_max)
        if axis is not None and layer == Layer.SEPARABLE:
            axes = [a for a in axes if a == axis]
        if not axes:
            raise CapReached(f"Layer {int(layer)} has no axis below the cap")
        best = None
        for axis in axes:
            coord, distance = _interval_maximin(s.pools.axis_taken(axis))
            if best is None or distance > best.score:
                best = Infill(layer, s.reference.axis_points(axis, [coord])[0], distance, axis)
        return best

    taken = s.pools.all_points()
    if candidates is not None:
        if tracker is None:
            tracker = NearestNeighborTracker(candidates, taken)
        try:
            idx, distance = tracker.farthest()
        except EmptyPool as e:
            raise CapReached("Every candidate is already sampled") from e
        return Infill(layer, tracker.candidates[idx].copy(), distance)

    def objective(X: np.ndarray) -> np.ndarray:
        return np.min(np.linalg.norm(X[:, None, :] - taken[None, :, :], axis=2), axis=1)

    x, distance = ga_maximize(objective, _ga_config(ga, s.dim, seed))
    return Infill(layer, x, distance)


# -- errors ---------------------------------------------------------------------


def layer_errors(
    s: DecomposedSurrogate,
    layer: Layer,
    search: Sequence[Infill],
    probability: float = 0.95,
) -> Tuple[float, float]:
    """(eps_val, eps_ci) of a trained layer, normalized by its observed range."""
    state = s.layer(layer)
    value_range = s.pools.value_range(layer)
    max_var = max(r.score for r in search)
    half = float(ci_half_width(max_var, probability))
    eps_ci = half / value_range if value_range > 0 else half
    return float(state.val_error[state.active]), eps_ci


def compute_errors(
    s: DecomposedSurrogate,
    *,
    ga: Optional[GaConfig] = None,
    candidates: Optional[np.ndarray] = None,
    probability: float = 0.95,
    seed: int = 0,
) -> ErrorRecord:
    """Errors of every layer; layer 2 reports its worst dimension."""
    record = ErrorRecord()
    for layer in Layer:
        if layer == Layer.SEPARABLE and s.dim == 1:
            record = record.with_layer(layer, 0.0, 0.0)
            continue
        empty = {
            Layer.SYMMETRIC: s.pools.v_sym == 0,
            Layer.SEPARABLE: s.pools.v_sep == 0,
            Layer.FREE: s.pools.v_dkg == 0,
        }[layer]
        if empty:
            raise EmptyValidation(f"Layer {int(layer)} has no validation points")
        search = variance_search(s, layer, ga=ga, candidates=candidates, seed=seed)
        record = record.with_layer(layer, *layer_errors(s, layer, search, probability))
    return record


def greedy_step(s: DecomposedSurrogate, g: GreedyOperator) -> Infill:
    """Member of the operator's candidate subset with the largest layer-3 variance."""
    subset = np.asarray(g(s), dtype=float)
    if subset.size == 0:
        raise EmptySubset("Greedy operator returned no candidates")
    subset = as_points(subset, s.dim)
    exclude = _sampled_mask(s, subset)
    try:
        idx, score = pool_argmax_index(lambda X: s.layer_variance(Layer.FREE, X), subset, exclude)
    except EmptyPool as e:
        raise EmptySubset("Every greedy candidate is already sampled") from e
    return Infill(Layer.FREE, subset[idx].copy(), score)


# -- loop -----------------------------------------------------------------------


class AdaptiveTrainer:
    """Runs the cyclic training loop on a black box."""

    def __init__(
        self,
        evaluator: Evaluator,
        cfg: TrainerConfig,
        pools: SamplingPools,
        greedy: Optional[GreedyOperator] = None,
        candidates: Optional[np.ndarray] = None,
        on_iteration: Optional[Callable[[DecomposedSurrogate, TrainerState], None]] = None,
    ):
        self.evaluator = evaluator
        self.cfg = cfg
        self.greedy = greedy
        self.candidates = None if candidates is None else np.asarray(candidates, dtype=float)
        self.on_iteration = on_iteration
        self.surrogate = DecomposedSurrogate(pools, n_windows=cfg.n_windows)
        self.state = TrainerState(ledger=evaluator.ledger)
        self.ga = GaConfig.unit_box(1, population=cfg.ga_population, generations=cfg.ga_generations)
        self._rng = np.random.default_rng(cfg.seed)
        self._searches: Dict[Layer, List[Infill]] = {}
        self._idle = 0
        self._tracker = (
            NearestNeighborTracker(self.candidates, pools.all_points()) if self.candidates is not None else None
        )

    @property
    def dim(self) -> int:
        return self.surrogate.dim

    @property
    def n_tot(self) -> int:
        return self.evaluator.n_evaluations

    def _seed(self) -> int:
        return int(self._rng.integers(2**31 - 1))

    # -- bookkeeping ----------------------------------------------------

    def _quality_met(self) -> bool:
        errors = self.state.errors
        layers_ok = not any(errors.unmet(layer, self.cfg) for layer in Layer)
        return layers_ok and self.surrogate.pools.v_dkg >= self.cfg.min_validation(self.dim)

    def _wants(self, layer: Layer) -> bool:
        short = self.surrogate.pools.v_dkg < self.cfg.min_validation(self.dim)
        return short or self.state.errors.unmet(layer, self.cfg)

    def _has_room(self, layer: Layer) -> bool:
        return bool(_uncapped_axes(self.surrogate, layer, self.cfg.n_ss_max))

    def _budget_left(self) -> bool:
        return self.n_tot < self.cfg.n_tot_max

    def _finished(self) -> bool:
        if self._quality_met():
            self.state.termination = QUALITY_MET
        elif not self._budget_left():
            self.state.termination = BUDGET_EXHAUSTED
        elif self._idle >= MAX_IDLE_ITERATIONS:
            # Every layer is capped or its candidates are used up.
            logger.warning(f"No admissible sample in {self._idle} iterations; stopping at {self.n_tot} samples")
            self.state.termination = BUDGET_EXHAUSTED
        return self.state.termination is not None

    def _retrain(self, layer: Layer) -> None:
        if layer == Layer.SEPARABLE and self.dim == 1:
            self.state.errors = self.state.errors.with_layer(layer, 0.0, 0.0)
            return
        self.surrogate = self.surrogate.retrain_layer(layer)
        try:
            search = variance_search(self.surrogate, layer, ga=self.ga, candidates=self.candidates, seed=self._seed())
        except DuplicateCandidate as e:
            logger.warning(f"Layer {int(layer)} variance search found nothing new: {e}")
            self._searches.pop(layer, None)
            eps_val = self.surrogate.layer(layer).val_error[self.surrogate.layer(layer).active]
            # Nothing was measured; the last confidence error stands.
            eps_ci = self.state.errors.eps_ci[int(layer) - 1]
            self.state.errors = self.state.errors.with_layer(layer, eps_val, eps_ci)
            return
        self._searches[layer] = search
        self.state.errors = self.state.errors.with_layer(
            layer, *layer_errors(self.surrogate, layer, search, self.cfg.ci_probability)
        )

    def _add(self, infill: Infill, rule: SampleRule) -> None:
        validation = rule == SampleRule.VAL
        if self.evaluator.seen(infill.point):
            raise DuplicateCandidate(f"Point {infill.point} was already evaluated")
        value = self.evaluator.evaluate(
            infill.point, iteration=self.state.iter, layer=int(infill.layer), rule=rule, errors=self.state.errors
        )
        pools = self.surrogate.pools
        if infill.layer == Layer.FREE:
            pools = pools.with_free_sample(infill.point, value, validation)
        else:
            pools = pools.with_axis_sample(infill.axis, infill.coord, value, validation)
        self.surrogate = self.surrogate.with_pools(pools)
        if self._tracker is not None:
            self._tracker.observe(infill.point)
        logger.debug(f"iter {self.state.iter}: {rule.value} sample at layer {int(infill.layer)} -> {value:.6g}")

    def _training_count(self, layer: Layer, axis: Optional[int] = None) -> int:
        pools = self.surrogate.pools
        if layer == Layer.SEPARABLE:
            return len(pools.sep_train[axis - 1])
        return {Layer.SYMMETRIC: pools.n_sym, Layer.FREE: pools.n_free}[layer]

    def _maybe_validate(self, infill: Infill) -> None:
        """Validation sample after ``infill`` whenever its axis (or layer 3) completes a period."""
        layer = infill.layer
        if self._training_count(layer, infill.axis) % self.cfg.validation_period != 0 or not self._budget_left():
            return
        try:
            infill = next_validation(
                self.surrogate,
                layer,
                ga=self.ga,
                candidates=self.candidates,
                tracker=self._tracker,
                n_ss_max=self.cfg.n_ss_max,
                seed=self._seed(),
                axis=infill.axis if layer == Layer.SEPARABLE else None,
            )
            self._add(infill, SampleRule.VAL)
        except (CapReached, DuplicateCandidate) as e:
            logger.debug(f"Skipping layer {int(layer)} validation point: {e}")

    def _explore(self, layer: Layer) -> Optional[Infill]:
        try:
            infill = next_exploration(
                self.surrogate,
                layer,
                ga=self.ga,
                candidates=self.candidates,
                n_ss_max=self.cfg.n_ss_max,
                seed=self._seed(),
                search=self._searches.get(layer),
            )
            self._add(infill, SampleRule.TRAIN)
        except (CapReached, DuplicateCandidate) as e:
            logger.debug(f"Layer {int(layer)} exploration skipped: {e}")
            return None
        return infill

    def _greedy_allowed(self) -> bool:
        if self.greedy is None or self.cfg.g_ratio <= 0:
            return False
        greedy = self.state.greedy_count
        explorative = self.surrogate.pools.n_free - greedy
        ratio = greedy / explorative if explorative > 0 else (0.0 if greedy == 0 else math.inf)
        return ratio < self.cfg.g_ratio

    def _exploit(self) -> Optional[Infill]:
        try:
            infill = greedy_step(self.surrogate, self.greedy)
            self._add(infill, SampleRule.GREEDY)
        except (EmptySubset, DuplicateCandidate) as e:
            logger.warning(f"Greedy step fell back to exploration: {e}")
            return self._explore(Layer.FREE)
        self.state.greedy_count += 1
        self.state.greedy_designs.append((self.state.iter, tuple(float(v) for v in infill.point)))
        return infill

    # -- main loop ------------------------------------------------------

    def _stalled(self) -> bool:
        """Quality unmet, yet no axis layer can take a sample and layer 3 is converged."""
        if self._quality_met() or self._wants(Layer.FREE):
            return False
        return not any(self._wants(layer) and self._has_room(layer) for layer in (Layer.SYMMETRIC, Layer.SEPARABLE))

    def _snapshot(self, visited: int) -> IterationSnapshot:
        state = self.state
        greedy = None
        if state.greedy_designs and state.greedy_designs[-1][0] == state.iter:
            greedy = state.greedy_designs[-1][1]
        return IterationSnapshot(
            iter=state.iter,
            visited=visited,
            n_tot=self.n_tot,
            counts=self.surrogate.pools.counts(),
            layers=self.surrogate.layer_summaries(),
            errors=state.errors,
            greedy_design=greedy,
        )

    def step(self) -> None:
        """One iteration: retrain per the cursor, then add at most one training sample."""
        state = self.state
        state.iter += 1
        cursor = state.next
        if cursor in (0, 2):
            self._retrain(Layer.SYMMETRIC)
        if cursor in (0, 2, 3):
            self._retrain(Layer.SEPARABLE)
        self._retrain(Layer.FREE)
        before = self.n_tot

        if cursor == 0:
            cursor = 1
        visited = 0
        if cursor == 1:
            if self._wants(Layer.SYMMETRIC) and self._has_room(Layer.SYMMETRIC) and self._budget_left():
                infill = self._explore(Layer.SYMMETRIC)
                if infill is not None:
                    visited = 1
                    self._maybe_validate(infill)
            else:
                cursor = 2
        if cursor == 2:
            if self._wants(Layer.SEPARABLE) and self._has_room(Layer.SEPARABLE) and self._budget_left():
                infill = self._explore(Layer.SEPARABLE)
                if infill is not None:
                    visited = 2
                    self._maybe_validate(infill)
            else:
                cursor = 3
        if cursor == 3 and self._budget_left() and (self._wants(Layer.FREE) or self._stalled()):
            infill = self._exploit() if self._greedy_allowed() else self._explore(Layer.FREE)
            if infill is not None:
                visited = 3
                self._maybe_validate(infill)

        state.visits.append(visited)
        state.error_history.append((state.iter, state.errors))
        state.history.append(self._snapshot(visited))
        self._idle = 0 if self.n_tot > before else self._idle + 1
        state.next = cursor + 1 if cursor < 3 else 1
        logger.debug(
            f"iter {state.iter}: visited={visited} n_tot={self.n_tot} "
            f"eps_val={state.errors.eps_val} eps_ci={state.errors.eps_ci}"
        )
        if self.on_iteration is not None:
            self.on_iteration(self.surrogate, state)

    def run(self) -> Tuple[DecomposedSurrogate, TrainerState]:
        logger.info(
            f"Training started: D={self.dim}, initial samples={self.n_tot}, budget={self.cfg.n_tot_max}"
        )
        while not self._finished():
            self.step()
        logger.info(
            f"Training finished ({self.state.termination}): {self.state.iter} iterations, "
            f"{self.n_tot} samples, {self.state.greedy_count} greedy"
        )
        return self.surrogate, self.state


def run_training(
    problem: Union[Evaluator, Callable[[np.ndarray], float]],
    cfg: TrainerConfig,
    init: SamplingPools,
    *,
    greedy: Optional[GreedyOperator] = None,
    candidates: Optional[np.ndarray] = None,
    on_iteration: Optional[Callable[[DecomposedSurrogate, TrainerState], None]] = None,
) -> Tuple[DecomposedSurrogate, TrainerState]:
    """Train a decomposed surrogate from an initial design until quality or budget stops it.

    ``problem`` is either an ``Evaluator`` that already holds the initial
    evaluations, or a plain cost callable; in the latter case the responses
    stored in ``init`` are registered as the initial ledger.
    """
    if isinstance(problem, Evaluator):
        evaluator = problem
    else:
        evaluator = Evaluator(problem, init.dim)
    points = np.vstack([init.union_train()[0], init.all_validation()[0]])
    values = np.concatenate([init.union_train()[1], init.all_validation()[1]])
    n_train = init.n_dkg
    for i, (x, z) in enumerate(zip(points, values)):
        evaluator.register(x, z, rule=SampleRule.TRAIN if i < n_train else SampleRule.VAL)

    trainer = AdaptiveTrainer(evaluator, cfg, init, greedy=greedy, candidates=candidates, on_iteration=on_iteration)
    return trainer.run()
