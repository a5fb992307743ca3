"""Exception types shared across the package."""


class CapsiftError(Exception):
    """Base class for all package-specific errors."""


class ParameterError(CapsiftError, ValueError):
    """An argument violates an operation's precondition."""


class DataFormatError(CapsiftError):
    """A file or payload does not match its documented format."""


class StateError(CapsiftError):
    """An operation was attempted in a state that forbids it."""


class BusyError(StateError):
    """A serialized resource (e.g. the training slot) is already in use."""
