"""Exception hierarchy. The CLI maps these onto its exit codes."""


class LiquidationError(Exception):
    """Base class for errors raised by this package."""


class ConfigError(LiquidationError, ValueError):
    """Malformed or inconsistent configuration (CLI exit code 1)."""


class DomainError(LiquidationError, ValueError):
    """Argument outside the domain of a formula."""


class InputError(LiquidationError, ValueError):
    """Inputs violate an operation's precondition."""


class AssumptionError(LiquidationError):
    """A coefficient assumption fails on the sample grid (CLI exit code 2)."""


class NumericalError(LiquidationError):
    """A solver failed (CLI exit code 3).

    ``time_index`` / ``time`` locate the failure when known.
    """

    def __init__(self, message: str, time_index: int | None = None, time: float | None = None):
        super().__init__(message)
        self.time_index = time_index
        self.time = time


class SchemeFault(NumericalError):
    """The discrete scheme broke a property it is built to preserve."""


class AcceptanceError(LiquidationError):
    """A verification check failed (CLI exit code 4)."""
