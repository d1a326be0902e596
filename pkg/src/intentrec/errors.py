"""Exception types shared across the package."""


class IntentRecError(Exception):
    """Base class for every error raised by this package."""


class ShapeError(IntentRecError, ValueError):
    """Operand dimensions are incompatible."""


class ConfigError(IntentRecError, ValueError):
    """A configuration value is missing, unknown, or out of range."""


class ParseError(IntentRecError, ValueError):
    """An input file could not be parsed."""


class RangeError(IntentRecError, ValueError):
    """An index is outside its declared range."""


class DataError(IntentRecError, ValueError):
    """A dataset violates a structural requirement."""


class SamplingError(IntentRecError, RuntimeError):
    """A requested random draw is impossible (e.g. no eligible negatives)."""


class CorruptionError(IntentRecError, ValueError):
    """Incidence corruption is undefined for the given input."""


class NumericOverflowError(IntentRecError, FloatingPointError):
    """A non-finite value appeared during a numeric computation."""


class StaleStateError(IntentRecError, RuntimeError):
    """Cached forward activations no longer match the current parameters."""


class ModeError(IntentRecError, RuntimeError):
    """An operation was invoked outside the mode it is defined for."""


class DivergenceError(IntentRecError, RuntimeError):
    """Training produced a non-finite loss."""
