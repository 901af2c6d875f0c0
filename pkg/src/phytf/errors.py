"""Exception types shared across the package."""


class PhytfError(Exception):
    """Base class for all package errors."""


class DimensionError(PhytfError):
    """Shapes or extents are inconsistent with an operation's contract."""


class ContractError(PhytfError):
    """An operation was invoked outside its stated preconditions."""


class DegenerateInputError(PhytfError):
    """Input is structurally valid but empty or otherwise degenerate."""


class NumericError(PhytfError):
    """Non-finite values or numerical instability were detected."""


class CapacityError(PhytfError):
    """A configured capacity (e.g. maximum sequence length) was exceeded."""


class ConfigError(PhytfError):
    """Invalid, unknown, or inconsistent configuration."""


class FormatError(PhytfError):
    """A serialized file does not match the expected on-disk format."""


class UnsupportedError(PhytfError):
    """The requested quantity is not available for this problem."""
