"""Exception hierarchy shared across the toolkit.

Split by exit-code semantics of the command line layer: configuration
problems, data problems, and fatal transport problems.
"""


class QuantitizeError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(QuantitizeError):
    """Invalid configuration: bad config file, unknown keys, missing auth."""


class DataError(QuantitizeError):
    """Invalid data: duplicate ids, unknown labels, misaligned id sets."""


class TransportError(QuantitizeError):
    """Model endpoint unreachable or persistently failing."""
