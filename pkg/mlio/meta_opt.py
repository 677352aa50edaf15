"""Meta-optimizers used inside the training loop.

``ga_maximize`` searches acquisition functions over a box, ``pool_argmax``
scans a finite candidate set exactly, and ``bounded_least_squares`` drives
the variogram fits. Objectives are batched: they map an ``(n, D)`` array of
points to ``n`` values.
"""

import logging
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, Field, field_validator, model_validator
from scipy.optimize import least_squares

from mlio.exceptions import EmptyPool, FitFailure

logger = logging.getLogger(__name__)

BatchObjective = Callable[[np.ndarray], np.ndarray]


class GaConfig(BaseModel):
    """Real-coded genetic algorithm settings."""

    bounds: List[Tuple[float, float]]
    population: int = Field(default=100, ge=4)
    generations: int = Field(default=100, ge=0)
    seed: int = 0
    warm_start: Optional[List[List[float]]] = None

    # Operators: tournament selection, blend crossover, decaying Gaussian mutation, elitism of 1.
    tournament_size: int = Field(default=3, ge=2)
    blend_alpha: float = Field(default=0.5, ge=0.0)
    mutation_scale: float = Field(default=0.1, gt=0.0)
    mutation_rate: Optional[float] = Field(default=None, gt=0.0, le=1.0)

    @field_validator("bounds")
    @classmethod
    def _bounds_ordered(cls, bounds):
        if not bounds:
            raise ValueError("bounds must contain at least one dimension")
        for lo, hi in bounds:
            if not lo <= hi:
                raise ValueError(f"bounds must be well-ordered, got [{lo}, {hi}]")
        return bounds

    @model_validator(mode="after")
    def _warm_start_shape(self):
        if self.warm_start:
            for row in self.warm_start:
                if len(row) != len(self.bounds):
                    raise ValueError("warm_start individuals must match the bounds dimensionality")
        return self

    @classmethod
    def unit_box(cls, dim: int, **kwargs) -> "GaConfig":
        return cls(bounds=[(0.0, 1.0)] * dim, **kwargs)


def _finite_scores(values) -> np.ndarray:
    scores = np.asarray(values, dtype=float).reshape(-1)
    return np.where(np.isnan(scores), -np.inf, scores)


def ga_maximize(objective: BatchObjective, cfg: GaConfig) -> Tuple[np.ndarray, float]:
    """Maximize a batched objective over the box in ``cfg.bounds``.

    Returns the best individual seen over all generations and its value.
    Identical seeds reproduce identical results.
    """
    rng = np.random.default_rng(cfg.seed)
    lo = np.array([b[0] for b in cfg.bounds], dtype=float)
    hi = np.array([b[1] for b in cfg.bounds], dtype=float)
    span = hi - lo
    dim = lo.size
    size = cfg.population
    rate = cfg.mutation_rate if cfg.mutation_rate is not None else max(1.0 / dim, 0.2)

    pop = lo + rng.random((size, dim)) * span
    if cfg.warm_start:
        seeds = np.clip(np.asarray(cfg.warm_start, dtype=float), lo, hi)[:size]
        pop[: len(seeds)] = seeds
    fitness = _finite_scores(objective(pop))

    best = int(np.argmax(fitness))
    best_x, best_val = pop[best].copy(), float(fitness[best])

    for gen in range(cfg.generations):
        sigma = cfg.mutation_scale * span * (1.0 - gen / cfg.generations)
        n_child = size - 1

        contenders = rng.integers(0, size, size=(2, n_child, cfg.tournament_size))
        winners = np.take_along_axis(
            contenders, np.argmax(fitness[contenders], axis=2)[..., None], axis=2
        )[..., 0]
        mother, father = pop[winners[0]], pop[winners[1]]

        low = np.minimum(mother, father)
        spread = np.abs(mother - father)
        children = (low - cfg.blend_alpha * spread) + rng.random((n_child, dim)) * (
            spread * (1.0 + 2.0 * cfg.blend_alpha)
        )
        mutate = rng.random((n_child, dim)) < rate
        children = children + mutate * rng.standard_normal((n_child, dim)) * sigma
        children = np.clip(children, lo, hi)

        pop = np.vstack([best_x[None, :], children])
        fitness = np.concatenate([[best_val], _finite_scores(objective(children))])

        gen_best = int(np.argmax(fitness))
        if fitness[gen_best] > best_val:
            best_x, best_val = pop[gen_best].copy(), float(fitness[gen_best])

    logger.debug(f"GA finished: dim={dim}, best={best_val:.6g}")
    return best_x, best_val


def pool_argmax_index(
    objective: BatchObjective,
    pool: np.ndarray,
    exclude: Optional[np.ndarray] = None,
) -> Tuple[int, float]:
    """Index and value of the best pool member; ties go to the lowest index."""
    pool = np.asarray(pool, dtype=float)
    if pool.ndim == 1:
        pool = pool.reshape(-1, 1)
    if pool.shape[0] == 0:
        raise EmptyPool("Candidate pool is empty")
    scores = _finite_scores(objective(pool))
    if exclude is not None:
        scores = np.where(np.asarray(exclude, dtype=bool), -np.inf, scores)
        if np.all(np.asarray(exclude, dtype=bool)):
            raise EmptyPool("Every pool member is excluded")
    idx = int(np.argmax(scores))
    return idx, float(scores[idx])


def pool_argmax(
    objective: BatchObjective,
    pool: np.ndarray,
    exclude: Optional[np.ndarray] = None,
) -> Tuple[np.ndarray, float]:
    """Exhaustive maximum over a finite pool."""
    pool = np.asarray(pool, dtype=float)
    if pool.ndim == 1:
        pool = pool.reshape(-1, 1)
    idx, value = pool_argmax_index(objective, pool, exclude)
    return pool[idx].copy(), value


def bounded_least_squares(
    residual: Callable[[np.ndarray], np.ndarray],
    bounds: Tuple[Sequence[float], Sequence[float]],
    init: Sequence[float],
    **options,
) -> np.ndarray:
    """Box-constrained nonlinear least squares (trust-region reflective).

    The returned parameters are feasible and never have a larger sum of
    squared residuals than ``init``. Parameters whose lower and upper bound
    coincide are held fixed.
    """
    lo = np.asarray(bounds[0], dtype=float)
    hi = np.asarray(bounds[1], dtype=float)
    x0 = np.asarray(init, dtype=float).copy()
    if np.any(x0 < lo) or np.any(x0 > hi):
        raise FitFailure(f"Initial point {x0} violates bounds")

    r0 = np.asarray(residual(x0), dtype=float)
    if not np.all(np.isfinite(r0)):
        raise FitFailure("Residual is not finite at the initial point")
    cost0 = float(r0 @ r0)
    if cost0 == 0.0:
        return x0

    free = lo < hi
    if not np.any(free):
        return x0

    def _residual(theta: np.ndarray) -> np.ndarray:
        x = x0.copy()
        x[free] = theta
        return residual(x)

    options.setdefault("ftol", 1e-12)
    options.setdefault("xtol", 1e-12)
    options.setdefault("gtol", 1e-12)
    options.setdefault("max_nfev", 1000)
    try:
        res = least_squares(_residual, x0[free], bounds=(lo[free], hi[free]), method="trf", **options)
    except (ValueError, np.linalg.LinAlgError) as e:
        raise FitFailure(f"Least-squares solver failed: {e}") from e

    x = x0.copy()
    x[free] = np.clip(res.x, lo[free], hi[free])
    r = np.asarray(residual(x), dtype=float)
    if not np.all(np.isfinite(r)):
        raise FitFailure("Least-squares solver returned a non-finite residual")
    if float(r @ r) > cost0:
        return x0
    return x
