"""Exception types shared across the package."""


class DimensionMismatchError(ValueError):
    """Operands have different simplex dimensions."""


class EnumerationInfeasibleError(ValueError):
    """Exact composition enumeration would exceed the feasibility cap."""


class BoundaryRiskError(ValueError):
    """A risk vector lies on the simplex boundary where an interior point is required."""


class ConvergenceError(RuntimeError):
    """A root-finder exhausted its iteration budget without meeting tolerance."""


class NonFiniteGradientError(RuntimeError):
    """A training gradient contained NaN or infinity."""
