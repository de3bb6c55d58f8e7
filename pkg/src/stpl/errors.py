"""Exception taxonomy shared across the package.

Each class maps to one CLI exit code (see cli.main): configuration problems
exit 2, data problems exit 3, numerical failures exit 4.
"""


class StplError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(StplError):
    """Invalid configuration: bad shapes, unknown keys, violated invariants."""


class DataError(StplError):
    """Missing or malformed dataset / checkpoint files."""


class NumericsError(StplError):
    """Non-finite values where finite ones are required (NaN loss, bad grads)."""


class TapeError(StplError):
    """Autograd tape misuse, e.g. backward through an already-consumed tape."""
