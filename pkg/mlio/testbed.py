"""Analytical testbed for design under uncertainty.

Six translated functions over the unit box, normalized to [0, 1] between
their analytical minimum and a conservative analytical maximum. The first
half of the coordinates are design variables, the second half uncertain
parameters. Ground truth comes from a factorial Halton pool of designs times
parameters.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Optional, Tuple, Union

import numpy as np
from scipy.stats import qmc

from mlio.exceptions import DegenerateNormalizer, OutOfDomain, UnknownId
from mlio.models import UNIT_TOL, as_points
from mlio.store import pool_store

logger = logging.getLogger(__name__)

# IA and SO never report less than this.
METRIC_FLOOR = 1e-5


class FunctionId(str, Enum):
    STEP = "step"
    ALPINE = "alpine"
    SUMSQUARES = "sumsquares"
    LEVY = "levy"
    ROSENBROCK = "rosenbrock"
    ACKLEY = "ackley"

    @classmethod
    def parse(cls, name: Union[str, "FunctionId"]) -> "FunctionId":
        if isinstance(name, cls):
            return name
        try:
            return cls(str(name).strip().lower())
        except ValueError:
            raise UnknownId(f"Unknown test function '{name}'") from None


# Box bounds per function, identical across dimensions.
BOUNDS: Dict[FunctionId, Tuple[float, float]] = {
    FunctionId.STEP: (0.0, 20.0),
    FunctionId.ALPINE: (0.0, 20.0),
    FunctionId.SUMSQUARES: (0.0, 20.0),
    FunctionId.LEVY: (0.0, 20.0),
    FunctionId.ROSENBROCK: (0.0, 1.0),
    FunctionId.ACKLEY: (0.0, 10.0),
}

DIAGONAL_TRANSLATION = {FunctionId.STEP, FunctionId.ALPINE}


class UqOperator(str, Enum):
    ROBUST = "robust"
    STOCHASTIC = "stochastic"

    def apply(self, values, axis: int = -1):
        """Aggregate responses over the parameter axis."""
        values = np.asarray(values, dtype=float)
        if self is UqOperator.ROBUST:
            return values.max(axis=axis)
        return values.mean(axis=axis)


# -- raw formulas -----------------------------------------------------------


def _step(x: np.ndarray) -> np.ndarray:
    return np.sum(np.floor(x + 0.5) ** 2, axis=1)


def _alpine(x: np.ndarray) -> np.ndarray:
    return np.sum(np.abs(x * np.sin(x) + 0.1 * x), axis=1)


def _sumsquares(x: np.ndarray) -> np.ndarray:
    weights = np.arange(1, x.shape[1] + 1)
    return x**2 @ weights


def _levy(x: np.ndarray) -> np.ndarray:
    w = 1.0 + (x - 1.0) / 4.0
    value = np.sin(np.pi * w[:, 0]) ** 2
    value += (w[:, -1] - 1.0) ** 2 * (1.0 + np.sin(2.0 * np.pi * w[:, -1]) ** 2)
    middle = w[:, 1:-1]
    value += np.sum((middle - 1.0) ** 2 * (1.0 + 10.0 * np.sin(2.0 * np.pi * middle + 1.0) ** 2), axis=1)
    return value


def _rosenbrock(x: np.ndarray) -> np.ndarray:
    a, b = x[:, :-1], x[:, 1:]
    return np.sum(100.0 * (a**2 - b) ** 2 + (a - 1.0) ** 2, axis=1)


def _ackley(x: np.ndarray) -> np.ndarray:
    d = x.shape[1]
    radial = -20.0 * np.exp(-0.2 * np.sqrt(np.sum(x**2, axis=1) / d))
    cosine = -np.exp(np.sum(np.cos(2.0 * np.pi * x), axis=1) / d)
    return radial + 20.0 + cosine + np.e


FORMULAS = {
    FunctionId.STEP: _step,
    FunctionId.ALPINE: _alpine,
    FunctionId.SUMSQUARES: _sumsquares,
    FunctionId.LEVY: _levy,
    FunctionId.ROSENBROCK: _rosenbrock,
    FunctionId.ACKLEY: _ackley,
}


def evaluate_raw(function, x):
    """Formula value in original units; one point gives a float, a batch an array."""
    fn = FORMULAS[FunctionId.parse(function)]
    arr = np.asarray(x, dtype=float)
    single = arr.ndim <= 1
    values = fn(arr.reshape(1, -1) if single else arr)
    return float(values[0]) if single else values


# -- translated, normalized problems ---------------------------------------------


def _raw_range(lower: np.ndarray, width: np.ndarray, t: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Raw coordinate interval reached from the unit box under translation ``t``."""
    return (0.0 - t) * width + lower, (1.0 - t) * width + lower


def _rosenbrock_term_max(a_lo: float, a_hi: float, b_lo: float, b_hi: float) -> float:
    """Max of 100 (a^2 - b)^2 + (a - 1)^2 over a box, by enumerating stationary candidates."""
    grid = np.array([0.0, 0.5, 1.0])
    b_candidates = b_lo + grid * (b_hi - b_lo)
    best = -np.inf
    for b in b_candidates:
        a_candidates = list(a_lo + grid * (a_hi - a_lo))
        roots = np.roots([400.0, 0.0, 2.0 - 400.0 * b, -2.0])
        a_candidates += [r.real for r in roots if abs(r.imag) < 1e-12 and a_lo <= r.real <= a_hi]
        a = np.asarray(a_candidates)
        best = max(best, float(np.max(100.0 * (a**2 - b) ** 2 + (a - 1.0) ** 2)))
    return best


def _maximum(function: FunctionId, lower: np.ndarray, width: np.ndarray, t: np.ndarray) -> float:
    lo, hi = _raw_range(lower, width, t)
    x_max = np.maximum(np.abs(0.0 - t), np.abs(1.0 - t)) * width + lower
    if function in (FunctionId.STEP, FunctionId.SUMSQUARES):
        return float(evaluate_raw(function, x_max))
    if function == FunctionId.ALPINE:
        return float(1.1 * np.sum(np.abs(x_max)))
    if function == FunctionId.LEVY:
        w = np.maximum(np.abs(lo - 1.0), np.abs(hi - 1.0)) / 4.0
        return float(1.0 + 11.0 * np.sum(w[:-1] ** 2) + 2.0 * w[-1] ** 2)
    if function == FunctionId.ROSENBROCK:
        return float(sum(_rosenbrock_term_max(lo[d], hi[d], lo[d + 1], hi[d + 1]) for d in range(lo.size - 1)))
    d = x_max.size
    return float(-20.0 * np.exp(-0.2 * np.sqrt(np.sum(x_max**2) / d)) + 20.0 - np.exp(-1.0) + np.e)


@dataclass(frozen=True)
class TestProblem:
    """One translated member of a test function family."""

    __test__ = False

    function: FunctionId
    dim: int
    translation: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    minf: float = 0.0
    maxf: float = field(default=np.nan)

    def __post_init__(self):
        object.__setattr__(self, "function", FunctionId.parse(self.function))
        for name in ("translation", "lower", "upper"):
            arr = np.asarray(getattr(self, name), dtype=float).reshape(-1)
            if arr.size != self.dim:
                raise ValueError(f"{name} has {arr.size} entries for D={self.dim}")
            object.__setattr__(self, name, arr)
        if not np.isfinite(self.maxf):
            object.__setattr__(self, "maxf", _maximum(self.function, self.lower, self.width, self.translation))

    @property
    def width(self) -> np.ndarray:
        return self.upper - self.lower

    @property
    def d_u(self) -> int:
        return self.dim // 2

    @property
    def d_p(self) -> int:
        return self.dim - self.d_u

    def to_raw(self, x_bar) -> np.ndarray:
        return (np.asarray(x_bar, dtype=float) - self.translation) * self.width + self.lower

    def describe(self) -> dict:
        return {
            "function": self.function.value,
            "dim": self.dim,
            "translation": self.translation.tolist(),
            "bounds": [float(self.lower[0]), float(self.upper[0])],
            "minf": self.minf,
            "maxf": self.maxf,
        }


def make_problem(function, dim: int, seed: int = 0) -> TestProblem:
    """Seeded translation drawn from U([0, 1])^D, shared across coordinates for Step and Alpine."""
    function = FunctionId.parse(function)
    if dim < 2:
        raise ValueError("Test problems need at least one design and one parameter dimension")
    rng = np.random.default_rng(seed)
    if function in DIAGONAL_TRANSLATION:
        translation = np.full(dim, rng.random())
    else:
        translation = rng.random(dim)
    lo, hi = BOUNDS[function]
    return TestProblem(function, dim, translation, np.full(dim, lo), np.full(dim, hi))


def evaluate_normalized(prob: TestProblem, x_bar):
    """Normalized response in [0, 1] at unit-box point(s)."""
    pts = np.asarray(x_bar, dtype=float)
    single = pts.ndim <= 1
    pts = as_points(pts, prob.dim)
    if np.any(pts < -UNIT_TOL) or np.any(pts > 1.0 + UNIT_TOL):
        raise OutOfDomain("Normalized coordinates must lie in [0, 1]")
    raw = FORMULAS[prob.function](prob.to_raw(pts))
    values = (raw - prob.minf) / (prob.maxf - prob.minf)
    return float(values[0]) if single else values


# -- Halton pools --------------------------------------------------------------


def halton_points(n: int, dim: int, start: int = 1) -> np.ndarray:
    """``n`` consecutive unscrambled Halton points beginning at index ``start``."""
    if start < 0 or n < 0:
        raise ValueError("Halton index and count must be non-negative")
    engine = qmc.Halton(d=dim, scramble=False)
    engine.fast_forward(start)
    return engine.random(n)


def halton(index: int, dim: int) -> np.ndarray:
    if index < 1:
        raise ValueError("Halton index starts at 1")
    return halton_points(1, dim, start=index)[0]


@dataclass
class ReferencePool:
    """Factorial design-by-parameter ground truth; row ``i * n_p + j`` pairs u_i with p_j."""

    u_points: np.ndarray
    p_points: np.ndarray
    responses: np.ndarray
    _uq: Dict[UqOperator, np.ndarray] = field(default_factory=dict, repr=False)

    @property
    def n_u(self) -> int:
        return self.u_points.shape[0]

    @property
    def n_p(self) -> int:
        return self.p_points.shape[0]

    def points(self) -> np.ndarray:
        u = np.repeat(self.u_points, self.n_p, axis=0)
        p = np.tile(self.p_points, (self.n_u, 1))
        return np.hstack([u, p])

    def uq_curve(self, op: UqOperator) -> np.ndarray:
        op = UqOperator(op)
        if op not in self._uq:
            self._uq[op] = op.apply(self.responses, axis=1)
        return self._uq[op]


def build_reference_pool(
    prob: TestProblem,
    n_u: int,
    n_p: int,
    seed: int = 0,
    use_cache: bool = True,
) -> ReferencePool:
    """Evaluate the factorial Halton pool, reusing the on-disk cache when allowed."""
    key = pool_store.key(prob.function.value, prob.dim, seed, n_u, n_p)
    if use_cache:
        cached = pool_store.load(key)
        if cached is not None:
            arrays, manifest = cached
            stored = np.asarray(manifest.get("translation", []), dtype=float)
            if stored.shape == prob.translation.shape and np.allclose(stored, prob.translation):
                return ReferencePool(arrays["u_points"], arrays["p_points"], arrays["responses"])
            logger.warning(f"Cached pool {key} has a different translation; rebuilding")

    u_points = halton_points(n_u, prob.d_u)
    p_points = halton_points(n_p, prob.d_p)
    pool = ReferencePool(u_points, p_points, np.empty((n_u, n_p)))
    pool.responses[:] = np.asarray(evaluate_normalized(prob, pool.points())).reshape(n_u, n_p)
    logger.info(f"Built reference pool {key}: {n_u * n_p} responses")

    if use_cache:
        pool_store.save(
            key,
            {"u_points": u_points, "p_points": p_points, "responses": pool.responses},
            dict(prob.describe(), seed=seed, n_u=n_u, n_p=n_p),
        )
    return pool


def uq_true(pool: ReferencePool, u_index: int, op: UqOperator) -> float:
    return float(pool.uq_curve(op)[u_index])


def best_design(curve) -> int:
    """Index of the smallest UQ value; ties go to the lowest index."""
    return int(np.argmin(np.asarray(curve, dtype=float)))


def metrics(
    pool: ReferencePool,
    op: UqOperator,
    u_method: Optional[Union[int, np.ndarray]],
    uq_estimate: Optional[float] = None,
    problem: Optional[TestProblem] = None,
) -> Tuple[float, float]:
    """Inaccuracy and suboptimality of a chosen design, range-normalized and floored.

    ``u_method`` is a design index into the pool, or a design point when
    ``problem`` is given (its true UQ is then evaluated over the pool's
    parameters). ``None`` means no design estimate exists yet.
    """
    if u_method is None or uq_estimate is None:
        return 1.0, 1.0
    curve = pool.uq_curve(op)
    spread = float(curve.max() - curve.min())
    if spread <= 0:
        raise DegenerateNormalizer("True UQ is constant over the reference designs")

    if np.ndim(u_method) == 0:
        true_at_method = float(curve[int(u_method)])
    else:
        if problem is None:
            raise ValueError("A design point needs the problem to evaluate its true UQ")
        u = np.asarray(u_method, dtype=float).reshape(1, -1)
        X = np.hstack([np.repeat(u, pool.n_p, axis=0), pool.p_points])
        true_at_method = float(UqOperator(op).apply(evaluate_normalized(problem, X)))

    ia = abs(float(uq_estimate) - true_at_method) / spread
    so = abs(true_at_method - float(curve.min())) / spread
    return float(np.clip(ia, METRIC_FLOOR, 1.0)), float(np.clip(so, METRIC_FLOOR, 1.0))
