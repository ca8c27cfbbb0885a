"""Exception hierarchy. SpecError maps to CLI exit code 2, NumericalError to 3."""


class BirkhoffError(Exception):
    """Base class for all package errors."""


class SpecError(BirkhoffError):
    """Invalid problem specification (schema, shapes, rank deficiency)."""

    def __init__(self, message, field=None):
        self.field = field
        super().__init__(f"{field}: {message}" if field else message)


class RankAmbiguityError(SpecError):
    """Numerical rank of a boundary block sits inside the tolerance band."""


class NumericalError(BirkhoffError):
    """A numerical procedure failed or did not converge."""


class ContourError(NumericalError):
    """Argument-principle contour could not be placed (zero on boundary)."""


class ConvergenceError(NumericalError):
    """Iteration or extrapolation did not reach the requested tolerance."""


class AtCharacteristicValue(NumericalError):
    """Operation requested at (or too close to) a zero of the characteristic determinant."""


class NotACharacteristicValue(NumericalError):
    """Operation requires a characteristic value but the determinant is not singular there."""
