"""Exception types. ``exit_code`` is what the command-line front end returns."""


class PhotonLinkError(Exception):
    exit_code = 3


class InvalidParameterError(PhotonLinkError, ValueError):
    exit_code = 2


class InsufficientDataError(PhotonLinkError, ValueError):
    exit_code = 2


class ConditioningError(PhotonLinkError, ValueError):
    exit_code = 3


class DomainError(PhotonLinkError, ValueError):
    """Evaluation requested outside the time span a range model covers."""

    exit_code = 3


class ConvergenceError(PhotonLinkError, ArithmeticError):
    exit_code = 3


class ResourceError(PhotonLinkError):
    exit_code = 3


class FormatError(PhotonLinkError, ValueError):
    exit_code = 2
