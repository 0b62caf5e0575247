"""Exception taxonomy shared across the package."""


class MotPoolError(Exception):
    """Base class for all package errors."""


class DimensionError(MotPoolError, ValueError):
    """Array shape or length does not match the declared contract."""


class StateError(MotPoolError, RuntimeError):
    """Operation called in an invalid order (e.g. backward before forward)."""


class NumericError(MotPoolError, ArithmeticError):
    """Non-finite value where a finite one is required."""


class UsageError(MotPoolError, ValueError):
    """API misuse: inconsistent arguments or mode/input mismatch."""


class ConfigError(MotPoolError, ValueError):
    """Configuration violates an invariant; message names the offending key."""


class ParseError(MotPoolError, ValueError):
    """Malformed input file; carries the 1-based line number."""

    def __init__(self, message: str, line_no: int | None = None):
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)
        self.line_no = line_no


class IntegrityError(MotPoolError, ValueError):
    """Structurally valid input with inconsistent content (e.g. duplicate keys)."""


class EvaluationError(MotPoolError, ValueError):
    """Metric evaluation impossible (e.g. empty ground truth)."""
