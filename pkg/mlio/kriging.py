"""Ordinary Kriging on scalar residual observations."""

import logging
import warnings
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy.linalg import LinAlgWarning, get_lapack_funcs, lu_factor, lu_solve
from scipy.spatial.distance import cdist, pdist, squareform
from scipy.stats import norm

from mlio.exceptions import (
    DimensionMismatch,
    InvalidProbability,
    KrigingConsistencyError,
    SingularSystem,
)
from mlio.models import ObservationSet, Prediction, as_points
from mlio.variogram import VariogramFit, eval_model

logger = logging.getLogger(__name__)

CONDITION_LIMIT = 1e8
NUGGET_GUARD = 1e-8
VARIANCE_TOL = 1e-12


@dataclass(frozen=True)
class KrigingSystem:
    """Factorized bordered matrix ``[[Gamma, 1], [1^T, 0]]`` with its data.

    ``fit`` is the model actually used to build ``Gamma``, i.e. including
    the guard nugget when ``nugget_guard`` is set.
    """

    locations: np.ndarray
    values: np.ndarray
    fit: VariogramFit
    lu: np.ndarray
    piv: np.ndarray
    condition: float
    nugget_guard: bool = False

    @property
    def size(self) -> int:
        return self.locations.shape[0]

    @property
    def dim(self) -> int:
        return self.locations.shape[1]

    @property
    def variance_tolerance(self) -> float:
        """How far below zero a variance may fall before it is an error.

        ``VARIANCE_TOL`` on well-conditioned systems. Above a condition of
        about 70 the bound becomes ``64 * eps * condition``, since the
        solve's round-off grows with the condition number. Variances within
        the bound are clamped to zero either way.
        """
        return max(VARIANCE_TOL, 64.0 * np.finfo(float).eps * self.condition)


def bordered_matrix(fit: VariogramFit, distances: np.ndarray) -> np.ndarray:
    """Semivariance block bordered by ones and a zero corner."""
    n = distances.shape[0]
    gamma = np.asarray(eval_model(fit, distances), dtype=float).reshape(n, n)
    # Distinct observations at zero separation see the nugget limit gamma(0+) = c.
    coincident = distances == 0
    np.fill_diagonal(coincident, False)
    gamma[coincident] = fit.c
    np.fill_diagonal(gamma, 0.0)

    alpha = np.ones((n + 1, n + 1))
    alpha[:n, :n] = gamma
    alpha[n, n] = 0.0
    return alpha


def _factorize(alpha: np.ndarray) -> Tuple[np.ndarray, np.ndarray, float]:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", LinAlgWarning)
        lu, piv = lu_factor(alpha)
    (gecon,) = get_lapack_funcs(("gecon",), (lu,))
    rcond, _ = gecon(lu, np.linalg.norm(alpha, 1), norm="1")
    condition = np.inf if rcond <= 0 or not np.isfinite(rcond) else 1.0 / rcond
    return lu, piv, float(condition)


def assemble_system(
    obs: ObservationSet,
    fit: VariogramFit,
    distances: Optional[np.ndarray] = None,
) -> KrigingSystem:
    """Build and factorize the bordered system for ``obs`` under ``fit``.

    When the 1-norm condition estimate exceeds ``CONDITION_LIMIT`` the
    system is rebuilt with a ``NUGGET_GUARD`` nugget.
    """
    if distances is None:
        distances = squareform(pdist(obs.locations))
    else:
        distances = np.asarray(distances, dtype=float)
        if distances.shape != (obs.size, obs.size):
            raise DimensionMismatch(f"Distance matrix {distances.shape} does not match {obs.size} observations")

    lu, piv, condition = _factorize(bordered_matrix(fit, distances))
    guarded = False
    if condition > CONDITION_LIMIT:
        logger.debug(f"Condition {condition:.3g} above {CONDITION_LIMIT:g}; applying nugget {NUGGET_GUARD:g}")
        fit = fit.with_nugget(NUGGET_GUARD)
        lu, piv, condition = _factorize(bordered_matrix(fit, distances))
        guarded = True
        if condition * np.finfo(float).eps >= 1.0:
            raise SingularSystem(f"Bordered system of size {obs.size + 1} is singular even with the nugget guard")

    return KrigingSystem(
        locations=obs.locations,
        values=obs.values,
        fit=fit,
        lu=lu,
        piv=piv,
        condition=condition,
        nugget_guard=guarded,
    )


def solve_weights(sys: KrigingSystem, queries) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Weights ``(N, n)``, multipliers ``(n,)`` and right-hand sides ``gamma0 (N, n)``."""
    q = as_points(queries, sys.dim)
    gamma0 = np.asarray(eval_model(sys.fit, cdist(sys.locations, q)), dtype=float).reshape(sys.size, -1)
    rhs = np.vstack([gamma0, np.ones((1, q.shape[0]))])
    sol = lu_solve((sys.lu, sys.piv), rhs)
    return sol[:-1], sol[-1], gamma0


def predict_many(sys: KrigingSystem, queries) -> Tuple[np.ndarray, np.ndarray]:
    """Means and clamped variances at every query point."""
    weights, lam, gamma0 = solve_weights(sys, queries)
    mean = weights.T @ sys.values
    variance = np.sum(weights * gamma0, axis=0) + lam

    tol = sys.variance_tolerance
    if np.any(variance < -tol):
        worst = float(variance.min())
        raise KrigingConsistencyError(f"Prediction variance {worst:.3e} is below -{tol:.1e}")
    return mean, np.maximum(variance, 0.0)


def predict(sys: KrigingSystem, query) -> Prediction:
    mean, variance = predict_many(sys, as_points(query, sys.dim)[:1])
    return Prediction(mean=float(mean[0]), variance=float(variance[0]))


def confidence_interval(p: Prediction, P: float) -> Tuple[float, float]:
    """Central interval holding probability ``P`` of N(mean, variance)."""
    if not 0.0 < P < 1.0:
        raise InvalidProbability(f"Probability must be in (0, 1), got {P}")
    if p.variance < 0:
        raise ValueError("Variance must be non-negative")
    if p.variance == 0:
        return p.mean, p.mean
    lo, hi = norm.ppf([(1.0 - P) / 2.0, (1.0 + P) / 2.0], loc=p.mean, scale=np.sqrt(p.variance))
    return float(lo), float(hi)


def ci_half_width(variance, P: float = 0.95):
    """Upper half-width of the central ``P`` interval for the given variance(s)."""
    if not 0.0 < P < 1.0:
        raise InvalidProbability(f"Probability must be in (0, 1), got {P}")
    return norm.ppf((1.0 + P) / 2.0) * np.sqrt(np.maximum(variance, 0.0))
