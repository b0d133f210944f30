"""Exception types shared across the library."""


class Al3Error(Exception):
    """Base class for all al3 errors."""


class RejectedInputError(Al3Error, ValueError):
    """An argument violates a documented precondition."""


class DimensionError(RejectedInputError):
    """Operands have incompatible shapes."""


class MatrixMarketError(Al3Error, ValueError):
    """Malformed Matrix Market file."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class FactorBreakdownError(Al3Error, ArithmeticError):
    """Nonpositive pivot encountered during (incomplete) Cholesky."""

    def __init__(self, row: int, message: str | None = None):
        self.row = row
        super().__init__(message or f"nonpositive pivot at row {row}")


class SingularFactorError(Al3Error, ArithmeticError):
    """Triangular solve hit a zero diagonal."""


class FactorizationError(Al3Error, ArithmeticError):
    """Dense factorization failed (singular or indefinite input)."""


class DeskScaleError(Al3Error, ValueError):
    """Problem exceeds the size cap of a dense desk-scale routine."""


class InvalidSampleError(Al3Error, ValueError):
    """Quadratic-sample parameters outside the valid region."""


class InnerSolveError(Al3Error, ArithmeticError):
    """An inner solve inside the preconditioner application broke down."""
