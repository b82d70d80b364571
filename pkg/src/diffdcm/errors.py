"""Exception hierarchy shared by every diffdcm module."""


class DiffDCMError(Exception):
    """Base class for all errors raised by diffdcm."""


class InvalidInputError(DiffDCMError, ValueError):
    """Malformed arguments: wrong shapes, empty data, out-of-range options."""


class DomainError(DiffDCMError, ValueError):
    """Inputs outside the domain of the log/exp architecture (x <= 0)."""


class OracleError(DiffDCMError, ArithmeticError):
    """A finite-difference oracle evaluated to a non-finite value."""


class ParseError(DiffDCMError, ValueError):
    """A data file or rendered expression could not be parsed."""


class ConfigError(DiffDCMError, ValueError):
    """A configuration references unknown columns, features or alternatives."""


class EstimationError(DiffDCMError, ArithmeticError):
    """Maximum likelihood estimation failed (singular Hessian, divergence)."""


class NumericalError(DiffDCMError, ArithmeticError):
    """Training produced a non-finite loss or parameter."""
