"""Exception types shared across the package."""


class LinerecError(Exception):
    """Base class for errors raised by this package."""


class ConfigError(LinerecError):
    """Invalid or inconsistent configuration."""


class DataError(LinerecError):
    """Unreadable or malformed input data."""


class DivergenceError(LinerecError):
    """Training loss went non-finite or blew past the divergence guard."""


class InfeasibleTargetError(DataError):
    """Target sequence does not fit into the available output columns."""


class DecodeError(LinerecError):
    """Constrained search finished without a complete hypothesis."""


class StaleCacheError(LinerecError):
    """Backward called with a cache from a superseded set of parameters."""
