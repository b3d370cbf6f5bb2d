"""Exception hierarchy shared across the package."""


class DathermError(Exception):
    """Base class for all package-specific failures."""


class NotFound(DathermError):
    """Exhaustive search finished without a hit."""


class DegenerateSubspaces(DathermError):
    """Two subspaces share a direction (minimal principal angle below tolerance)."""


class JumpTooLarge(DathermError):
    """A pseudo-orbit jump exceeds the shadowing threshold eta/C."""


class InvalidParams(DathermError):
    """Construction parameters violate a required inequality."""


class EmptyCollection(DathermError):
    """No candidate orbit segments matched the collection at this length."""


class GridTooCoarse(DathermError):
    """The sampling grid misses a region that must be resolved."""


class DomainError(DathermError, ValueError):
    """Argument outside the mathematical domain of the function."""


class NoConvergence(DathermError):
    """An iterative scheme failed to converge within its budget."""


class NotGood(DathermError):
    """Orbit segment is outside the good collection required by the operation."""


class LeafIntersectionFailure(DathermError):
    """Transverse local leaves could not be intersected."""


class PreconditionTooShort(DathermError):
    """Orbit segments are shorter than the minimum length for gluing."""


class NonMonotoneEstimates(DathermError):
    """A pressure curve that must decrease came out non-monotone beyond error bars."""
