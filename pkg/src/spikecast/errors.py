"""Exception types shared across the package."""


class SpikecastError(Exception):
    """Base class for all package errors."""


class SchemaError(SpikecastError):
    """Input file or config does not match the expected schema."""


class ParseError(SpikecastError):
    """A cell could not be parsed or fails a validity bound."""


class OrderingError(SpikecastError):
    """Timestamps are not strictly increasing."""


class ConfigError(SpikecastError):
    """Invalid configuration value."""


class ShapeError(SpikecastError):
    """Array shapes do not conform."""


class ContractError(SpikecastError):
    """An API contract was violated by the caller."""


class ParameterError(SpikecastError):
    """Neuron or model parameter outside its valid range."""


class NumericError(SpikecastError):
    """Numeric failure: non-finite values or non-convergence."""


class InsufficientDataError(SpikecastError):
    """Not enough rows to build at least one sample."""
