"""Exception hierarchy shared by every module."""


class DelaySpaceError(Exception):
    """Base class for all package errors."""


class InvalidInputError(DelaySpaceError, ValueError):
    pass


class SVDFailureError(DelaySpaceError, ArithmeticError):
    """LAPACK did not converge; usually means the input is ill-conditioned."""


class FormatError(DelaySpaceError, ValueError):
    """A file did not match the expected layout (header, field count)."""


class EmptyMatrixError(InvalidInputError):
    pass


class TagDataError(DelaySpaceError, KeyError):
    """Endpoint tags are missing or inconsistent for some row/column ids."""

    def __init__(self, message, ids=()):
        super().__init__(message)
        self.ids = list(ids)

    def __str__(self):
        return self.args[0]


class InvalidSpecError(DelaySpaceError, ValueError):
    pass
