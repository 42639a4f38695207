"""Exception types shared across the package."""


class CERegionsError(Exception):
    """Base class for all package-specific errors."""


class MalformedInputError(CERegionsError, ValueError):
    """Raised when numeric input is structurally invalid (zero rows, shape mismatch...)."""


class EmptySetError(CERegionsError):
    """Raised when an operation requires a nonempty polytope."""


class NotCoveredError(CERegionsError):
    """Raised when a query point lies outside every region of a piecewise solution."""


class NonFiniteGroupError(CERegionsError):
    """Raised when generator closure exceeds the element cap."""


class OrbitInconsistencyError(CERegionsError):
    """Raised when a mapped region lands in no member of a supposedly symmetric collection."""


class InfeasibleProblemError(CERegionsError):
    """Raised when a problem instance has no feasible point at all."""


class GridTooCoarseError(CERegionsError):
    """Raised when a brute-force grid cannot bracket any feasible input."""


class SchemaError(CERegionsError, ValueError):
    """Raised on problem-file validation failures; message names the offending field."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


class VerificationError(CERegionsError):
    """Raised when a verification pass finds a mismatch."""
