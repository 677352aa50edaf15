"""Value types shared by the Kriging layers."""

from dataclasses import dataclass

import numpy as np

from mlio.exceptions import DimensionMismatch, OutOfDomain, TooFewPoints

# Slack for coordinates that land a hair outside [0, 1] after arithmetic.
UNIT_TOL = 1e-12


def as_points(points, dim: int | None = None) -> np.ndarray:
    """Coerce a point or a batch of points to a float (n, D) array."""
    arr = np.asarray(points, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1) if dim is None or arr.size == dim else arr.reshape(-1, 1)
    elif arr.ndim != 2:
        raise DimensionMismatch(f"Expected a point or an (n, D) array, got shape {arr.shape}")
    if dim is not None and arr.shape[1] != dim:
        raise DimensionMismatch(f"Expected dimensionality {dim}, got {arr.shape[1]}")
    return arr


def check_unit_box(points: np.ndarray) -> None:
    if np.any(points < -UNIT_TOL) or np.any(points > 1.0 + UNIT_TOL):
        raise OutOfDomain("Coordinates must lie in [0, 1]")


@dataclass(frozen=True)
class ObservationSet:
    """Locations in the unit hypercube with one scalar value each."""

    locations: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        locations = np.asarray(self.locations, dtype=float)
        if locations.ndim == 1:
            locations = locations.reshape(-1, 1)
        values = np.asarray(self.values, dtype=float).reshape(-1)
        if locations.ndim != 2:
            raise DimensionMismatch("Locations must be a list of points")
        if locations.shape[0] != values.shape[0]:
            raise DimensionMismatch(
                f"{locations.shape[0]} locations but {values.shape[0]} values"
            )
        if locations.shape[0] < 2:
            raise TooFewPoints("At least two observations are required")
        check_unit_box(locations)
        object.__setattr__(self, "locations", locations)
        object.__setattr__(self, "values", values)

    @property
    def size(self) -> int:
        return self.locations.shape[0]

    @property
    def dim(self) -> int:
        return self.locations.shape[1]


@dataclass(frozen=True)
class Prediction:
    mean: float
    variance: float
