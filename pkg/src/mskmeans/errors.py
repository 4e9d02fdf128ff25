"""Exception types raised across the package."""


class MskError(Exception):
    """Base class for all package errors."""


class InvalidInput(MskError, ValueError):
    pass


class EmptyInput(MskError, ValueError):
    pass


class EmptyMask(MskError, ValueError):
    pass


class ResourceLimit(MskError, RuntimeError):
    pass


class FormatError(MskError, ValueError):
    """Malformed container file.

    Parameters
    ----------
    message : str
        What went wrong.
    offset : int, optional
        Byte offset in the file at which the problem was detected.
    """

    def __init__(self, message, offset=None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
