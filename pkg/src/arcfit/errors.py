"""Exception hierarchy for arcfit."""


class ArcfitError(Exception):
    """Base class for all errors raised by this package."""


class DomainError(ArcfitError, ValueError):
    """An argument lies outside the physical or mathematical domain of an operation."""


class DataError(ArcfitError):
    """A dataset is structurally invalid or inconsistent with the requested operation."""


class ParseError(DataError):
    """A data file could not be parsed.

    Attributes
    ----------
    line : int or None
        1-based line number of the offending row, when known.
    """

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ConfigError(ArcfitError):
    """A configuration value is missing, malformed, or inconsistent."""


class IntegrationError(ArcfitError):
    """Time integration failed (for example, step-size underflow on a stiff spike).

    Attributes
    ----------
    partial : SimulationResult or None
        Trajectory accumulated up to the last accepted step.
    """

    def __init__(self, message, partial=None):
        self.partial = partial
        super().__init__(message)


class FitError(ArcfitError):
    """A fitting routine could not produce a result (for example, a singular regression)."""


class CalibrationError(ArcfitError):
    """Root bracketing or tolerance could not be satisfied during calibration."""
