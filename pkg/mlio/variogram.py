"""Experimental semivariograms and their parametric fits.

All models use the practical-range convention: the exponential and
Gaussian shapes carry a factor 3 so that every kind gets close to its sill
near ``h = a``::

    spherical    shape(r) = 1.5 r - 0.5 r^3  (r <= 1), 1 beyond
    exponential  shape(r) = 1 - exp(-3 r)
    gaussian     shape(r) = 1 - exp(-3 r^2)
    linear       shape(r) = min(r, 1)        (diagnostics only, never fitted)

and ``gamma(h) = c + (b - c) * shape(h / a)`` for ``h > 0`` with
``gamma(0) = 0``.
"""

import csv
import logging
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Dict, Mapping, Optional

import numpy as np
from scipy.spatial.distance import pdist, squareform

from mlio.exceptions import FitFailure, TooFewPoints
from mlio.meta_opt import bounded_least_squares
from mlio.models import ObservationSet

logger = logging.getLogger(__name__)

DEFAULT_WINDOWS = 10
# Smallest admissible range, as a fraction of sqrt(D).
MIN_RANGE_FRACTION = 1e-6


class VariogramKind(str, Enum):
    SPHERICAL = "spherical"
    EXPONENTIAL = "exponential"
    GAUSSIAN = "gaussian"
    LINEAR = "linear"


FITTED_KINDS = (VariogramKind.SPHERICAL, VariogramKind.EXPONENTIAL, VariogramKind.GAUSSIAN)


def _spherical(r: np.ndarray) -> np.ndarray:
    r = np.minimum(r, 1.0)
    return 1.5 * r - 0.5 * r**3


def _exponential(r: np.ndarray) -> np.ndarray:
    return 1.0 - np.exp(-3.0 * r)


def _gaussian(r: np.ndarray) -> np.ndarray:
    return 1.0 - np.exp(-3.0 * r**2)


def _linear(r: np.ndarray) -> np.ndarray:
    return np.minimum(r, 1.0)


SHAPES = {
    VariogramKind.SPHERICAL: _spherical,
    VariogramKind.EXPONENTIAL: _exponential,
    VariogramKind.GAUSSIAN: _gaussian,
    VariogramKind.LINEAR: _linear,
}


@dataclass(frozen=True)
class VariogramFit:
    """Range ``a``, sill ``b`` and nugget ``c`` of one model kind."""

    kind: VariogramKind
    a: float
    b: float
    c: float = 0.0
    sse: float = 0.0
    flagged: bool = False

    def __post_init__(self):
        object.__setattr__(self, "kind", VariogramKind(self.kind))
        if not self.a > 0:
            raise ValueError(f"Variogram range must be positive, got {self.a}")
        if self.b < 0 or self.c < 0 or self.sse < 0:
            raise ValueError("Sill, nugget and SSE must be non-negative")

    def with_nugget(self, nugget: float) -> "VariogramFit":
        """Copy with at least ``nugget`` at the origin; the sill follows if needed."""
        c = max(self.c, nugget)
        return replace(self, c=c, b=max(self.b, c))

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "a": self.a, "b": self.b, "c": self.c,
                "sse": self.sse, "flagged": self.flagged}


@dataclass(frozen=True)
class ExperimentalSemivariogram:
    lags: np.ndarray
    gammas: np.ndarray
    n_windows: int
    h_max: float
    dim: int

    @property
    def size(self) -> int:
        return int(self.lags.size)


def eval_model(fit: VariogramFit, h):
    """Semivariance of ``fit`` at lag(s) ``h``; scalar in, scalar out."""
    lags = np.asarray(h, dtype=float)
    if np.any(lags < 0):
        raise ValueError("Lags must be non-negative")
    gamma = fit.c + (fit.b - fit.c) * SHAPES[fit.kind](lags / fit.a)
    gamma = np.where(lags > 0, np.minimum(gamma, fit.b), 0.0)
    if gamma.ndim == 0:
        return float(gamma)
    return gamma


def build_experimental(
    obs: ObservationSet,
    residuals: Optional[np.ndarray] = None,
    n_windows: int = DEFAULT_WINDOWS,
    distances: Optional[np.ndarray] = None,
) -> ExperimentalSemivariogram:
    """Point-wise experimental semivariogram.

    For every observation ``i`` the pairs ``(i, j)`` with ``j != i`` are
    binned into ``n_windows`` equal windows over ``[0, h_max]`` and each
    non-empty window yields one entry (mean lag, mean half squared
    difference). A distance on an inner window edge belongs to the upper
    window; ``h_max`` itself belongs to the last one.
    """
    if n_windows < 1:
        raise ValueError("n_windows must be at least 1")
    n = obs.size
    if n < 2:
        raise TooFewPoints("Semivariogram needs at least two observations")
    z = obs.values if residuals is None else np.asarray(residuals, dtype=float).reshape(-1)
    if z.size != n:
        raise ValueError(f"{z.size} residuals for {n} observations")

    dist = squareform(pdist(obs.locations)) if distances is None else np.asarray(distances, dtype=float)
    h_max = float(dist.max())
    if h_max > 0:
        window = np.minimum((dist / h_max * n_windows).astype(int), n_windows - 1)
    else:
        window = np.zeros_like(dist, dtype=int)
    half_sq = 0.5 * (z[:, None] - z[None, :]) ** 2

    off = ~np.eye(n, dtype=bool)
    rows = np.broadcast_to(np.arange(n)[:, None], (n, n))[off]
    keys = rows * n_windows + window[off]
    size = n * n_windows
    counts = np.bincount(keys, minlength=size)
    sum_h = np.bincount(keys, weights=dist[off], minlength=size)
    sum_g = np.bincount(keys, weights=half_sq[off], minlength=size)
    filled = counts > 0

    return ExperimentalSemivariogram(
        lags=sum_h[filled] / counts[filled],
        gammas=sum_g[filled] / counts[filled],
        n_windows=n_windows,
        h_max=h_max,
        dim=obs.dim,
    )


def _initial_guess(kind: VariogramKind, exp: ExperimentalSemivariogram, a_lo: float, a_hi: float) -> np.ndarray:
    a0 = float(np.clip(np.mean(exp.lags), a_lo, a_hi))
    unit = float(SHAPES[kind](np.array(1.0)))
    b0 = float(np.clip(np.mean(exp.gammas) / unit, 0.0, 1.0))
    return np.array([a0, b0, 0.0])


def fit_each_model(
    exp: ExperimentalSemivariogram,
    warm_start: Optional[Mapping[VariogramKind, VariogramFit]] = None,
) -> Dict[VariogramKind, VariogramFit]:
    """Fit every fitted kind; returns one VariogramFit per kind.

    The search runs on ``(a, b, rho)`` with ``c = rho * b`` so that the
    nugget never exceeds the sill.
    """
    if exp.size == 0:
        raise ValueError("Experimental semivariogram has no entries")
    a_hi = float(np.sqrt(exp.dim))
    a_lo = MIN_RANGE_FRACTION * a_hi
    bounds = ([a_lo, 0.0, 0.0], [a_hi, 1.0, 1.0])

    fits: Dict[VariogramKind, VariogramFit] = {}
    for kind in FITTED_KINDS:
        shape = SHAPES[kind]

        def residual(theta: np.ndarray, shape=shape) -> np.ndarray:
            a, b, rho = theta
            c = rho * b
            return c + (b - c) * shape(exp.lags / a) - exp.gammas

        previous = (warm_start or {}).get(kind)
        if previous is not None:
            rho = previous.c / previous.b if previous.b > 0 else 0.0
            init = np.clip([previous.a, previous.b, rho], bounds[0], bounds[1])
        else:
            init = _initial_guess(kind, exp, a_lo, a_hi)

        flagged = False
        try:
            theta = bounded_least_squares(residual, bounds, init)
        except FitFailure as e:
            logger.warning(f"{kind.value} fit fell back to its initial point: {e}")
            theta, flagged = init, True

        r = residual(theta)
        a, b, rho = (float(v) for v in theta)
        fits[kind] = VariogramFit(kind=kind, a=a, b=b, c=rho * b, sse=float(r @ r), flagged=flagged)
    return fits


def best_fit(fits: Mapping[VariogramKind, VariogramFit]) -> VariogramFit:
    """Smallest SSE; ties keep the order spherical, exponential, gaussian."""
    return min(fits.values(), key=lambda f: (f.sse, FITTED_KINDS.index(f.kind)))


def fit_models(
    exp: ExperimentalSemivariogram,
    warm_start: Optional[Mapping[VariogramKind, VariogramFit]] = None,
) -> VariogramFit:
    return best_fit(fit_each_model(exp, warm_start))


def dump_csv(exp: ExperimentalSemivariogram, fit: VariogramFit, path: Path, n_curve: int = 50) -> Path:
    """Write ``lag,gamma_exp,gamma_fit,kind`` rows: experimental entries, then curve samples."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    top = exp.h_max if exp.h_max > 0 else fit.a
    curve = np.linspace(0.0, top, n_curve)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["lag", "gamma_exp", "gamma_fit", "kind"])
        for lag, gamma in zip(exp.lags, exp.gammas):
            writer.writerow([repr(float(lag)), repr(float(gamma)), repr(eval_model(fit, float(lag))), fit.kind.value])
        for lag in curve:
            writer.writerow([repr(float(lag)), "", repr(eval_model(fit, float(lag))), fit.kind.value])
    return path
