"""Exception hierarchy shared by every module of the package."""


class RobustOmcError(Exception):
    """Base class for all package errors."""


class ConfigurationError(RobustOmcError, ValueError):
    """Invalid inputs, mismatched dimensions or inconsistent settings."""


class NumericalError(RobustOmcError, ArithmeticError):
    """A computation produced non-finite values or failed to factorise.

    Parameters
    ----------
    message : str
        Human-readable description.
    theta : array_like, optional
        Parameter vector at which the failure occurred.
    """

    def __init__(self, message: str, theta=None):
        super().__init__(message)
        self.theta = theta


class RegionDegenerateError(RobustOmcError):
    """A proposal region could not be built around an optimisation end point."""


class UndefinedESSError(RobustOmcError, ValueError):
    """The effective sample size is undefined because all weights are zero."""
