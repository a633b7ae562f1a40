class MtbciError(Exception):
    """Base class for library errors."""


class ValidationError(MtbciError, ValueError):
    """Input data, manifest or configuration is invalid."""


class SolverError(MtbciError, RuntimeError):
    """A linear system could not be solved or produced non-finite values."""


class DegenerateScatterError(MtbciError, ArithmeticError):
    """Weight scatter has zero trace, so it cannot be trace-normalised."""
