"""Exception types shared across the package."""


class NumericalError(RuntimeError):
    """A numerical stage failed (eigensolver, factorization, indefinite kernel)."""


class DegenerateInputError(NumericalError, ValueError):
    """Input is degenerate for the requested quantity (e.g. a zero norm)."""


class ThresholdTooSmallError(NumericalError):
    """The selected leading block of R is numerically singular."""
