"""Exception hierarchy; the CLI maps these onto exit codes."""


class PdoError(Exception):
    """Base class for all package errors."""


class ConfigurationError(PdoError):
    """Invalid configuration, parameters, or mismatched inputs (exit code 2)."""


class DataError(PdoError):
    """Missing or corrupt on-disk artifacts (exit code 2)."""


class SimulationError(PdoError):
    """A solver produced an inadmissible physical state (exit code 3)."""


class NumericalError(PdoError):
    """A numerical procedure failed to converge or produced NaN (exit code 3)."""
