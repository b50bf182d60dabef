"""
Exception types raised across the package.

Bad input surfaces as a ``ValueError`` subclass, backend/solver failures as a
``RuntimeError`` subclass, so callers that only know the builtins keep working.
"""


class DidmError(Exception):
    """Marker base for every error raised by this package."""


class ContractViolation(DidmError, ValueError):
    """A precondition of an operation was violated."""


class ConfigError(DidmError, ValueError):
    """An environment variable or experiment config is invalid."""


class DatasetLoadError(DidmError, ValueError):
    """A TU dataset file is missing or malformed."""


class GraphParseError(DidmError, ValueError):
    """A graph JSON document could not be parsed or validated."""


class InfeasibleTransport(DidmError, RuntimeError):
    """No coupling exists (empty support on one side with positive mass)."""


class SolverError(DidmError, RuntimeError):
    """The transport solver failed; ``pair`` holds the node pair if known."""

    def __init__(self, message: str, pair: tuple[int, int] | None = None) -> None:
        if pair is not None:
            message = f"{message} (node pair {pair})"
        super().__init__(message)
        self.pair = pair
