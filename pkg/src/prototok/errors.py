"""Exception types shared across the package."""


class PrototokError(Exception):
    """Base class for all package-specific errors."""


class ConfigurationError(PrototokError, ValueError):
    """Invalid configuration values (dimensions, rates, grids, flags)."""


class ShapeError(PrototokError, ValueError):
    """Mismatched array shapes or sequence lengths between arguments."""


class SequenceLengthError(PrototokError, ValueError):
    """Input sequence longer than the model's maximum positions."""


class NumericError(PrototokError, ArithmeticError):
    """Non-finite values encountered during numeric computation."""


class WeightsIOError(PrototokError, ValueError):
    """Malformed, truncated, or inconsistent weights files."""


class DegenerateVectorError(PrototokError, ValueError):
    """Zero or otherwise degenerate vector where a direction is required."""


class MissingDataError(PrototokError, ValueError):
    """Requested data was not captured or recorded."""


class MissingKeyError(PrototokError, KeyError):
    """Lookup key absent from a file-backed store."""


class ValidationError(PrototokError, ValueError):
    """Invalid data files or records (lexicons, corpora, paraphrases)."""


class GrammarError(PrototokError, ValueError):
    """Malformed, unproductive, or unreachable grammar definitions."""
