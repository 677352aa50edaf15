"""Error types raised across the MLIO package."""

from typing import Optional, Sequence


class MlioError(Exception):
    """Base class for every error raised by mlio."""


class DimensionMismatch(MlioError, ValueError):
    """Points of different dimensionality were mixed."""


class SingularSystem(MlioError):
    """The bordered Kriging system could not be factorized, even with the nugget guard."""


class KrigingConsistencyError(MlioError):
    """A prediction variance came out clearly negative."""


class InvalidProbability(MlioError, ValueError):
    """A confidence level outside (0, 1) was requested."""


class TooFewPoints(MlioError, ValueError):
    """Fewer than two observations were supplied."""


class FitFailure(MlioError):
    """The bounded least-squares solver produced no feasible point."""


class NotTrained(MlioError):
    """A surrogate layer was queried before its first training."""


class CapReached(MlioError):
    """A sampling pool reached its size cap."""


class DuplicateCandidate(MlioError):
    """An infill search returned a point that is already sampled."""


class EmptyValidation(MlioError):
    """A layer has no validation points to compute its error on."""


class EmptySubset(MlioError):
    """The greedy operator returned no candidates."""


class BlackBoxFailure(MlioError):
    """The user-supplied cost function failed at a location."""

    def __init__(self, location: Sequence[float], cause: Optional[BaseException] = None):
        self.location = tuple(float(v) for v in location)
        self.cause = cause
        super().__init__(f"Black-box evaluation failed at {self.location}: {cause!r}")


class EmptyPool(MlioError, ValueError):
    """A pool-restricted search received no candidates."""


class UnknownId(MlioError, ValueError):
    """The test function identifier is not part of the testbed."""


class OutOfDomain(MlioError, ValueError):
    """A normalized point lies outside the unit hypercube."""


class DegenerateNormalizer(MlioError):
    """The true UQ curve is flat, so IA/SO cannot be normalized."""


class InsufficientInit(MlioError, ValueError):
    """The initial design cannot be built (too few sets or budget too small)."""


class NoCandidates(MlioError, ValueError):
    """The design search has no candidate designs or no parameter samples."""
