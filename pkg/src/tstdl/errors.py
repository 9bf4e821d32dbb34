"""Exception hierarchy shared by all subpackages."""


class TstdlError(Exception):
    """Base class for errors raised by this package."""


class DimensionError(TstdlError, ValueError):
    """Operand shapes are incompatible."""


class ParameterError(TstdlError, ValueError):
    """An argument is outside its allowed range."""


class NonFiniteError(TstdlError, FloatingPointError):
    """A NaN or Inf appeared where finite values are required."""


class ContractError(TstdlError, RuntimeError):
    """An operation was called in a state its contract forbids."""


class FormatError(TstdlError, ValueError):
    """A binary container or input file is malformed."""


class SolverError(TstdlError, RuntimeError):
    """An iterative solver failed to produce a usable iterate."""
