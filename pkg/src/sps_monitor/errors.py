"""Exception types shared across the package."""


class SimulationError(Exception):
    """Base class for all errors raised by this package."""


class InvalidParams(SimulationError):
    """Physical or numerical parameters violate a hard constraint."""


class ConfigError(SimulationError):
    """An experiment configuration file could not be parsed."""


class NumericalBlowup(SimulationError):
    """An integration step produced entries beyond the sanity limit."""


class InvariantViolation(SimulationError):
    """A runtime-checked state or ensemble invariant failed."""


class RecordUndefined(SimulationError):
    """A measurement record was requested but eta * gamma = 0."""


class EmptyBatch(SimulationError):
    """An operation that needs at least one sample received none."""


class DelayOutOfRange(SimulationError):
    """A feed-forward delay falls outside the calibrated range."""


class DegenerateDenominator(SimulationError):
    """The coincidence normalization integral is numerically zero."""
