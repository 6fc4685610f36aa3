"""Exception types that the CLI maps onto exit codes.

Plain ValueError stays reserved for programming-contract violations
(bad shapes, out-of-range arguments); the classes here describe
conditions an operator can hit with well-formed calls.
"""


class ConfigError(Exception):
    """Invalid or inconsistent run configuration (exit code 2)."""


class DataError(Exception):
    """Malformed or unusable input data (exit code 3)."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class UnobservableScaleError(DataError):
    """The initialization window does not constrain the metric scale."""


class InitializationError(DataError):
    """Scale recovery produced a non-physical solution."""


class NumericalAbort(Exception):
    """Training or optimization hit a non-finite value (exit code 4)."""
