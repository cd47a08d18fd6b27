"""Exception hierarchy shared by all psfuse modules."""


class PsfuseError(Exception):
    """Base class for every error raised by psfuse."""


class ConfigurationError(PsfuseError, ValueError):
    pass


class GeometryError(PsfuseError, ValueError):
    pass


class OutOfDomainError(PsfuseError, ValueError):
    """Raised when locations fall outside the mesh.

    ``indices`` holds the offending row numbers (0-based).
    """

    def __init__(self, message, indices=()):
        super().__init__(message)
        self.indices = list(indices)


class NumericalError(PsfuseError, ArithmeticError):
    pass


class UnsupportedSmoothnessError(ConfigurationError):
    pass


class EmptyModelError(PsfuseError, ValueError):
    pass


class InputError(PsfuseError, ValueError):
    """Malformed user input (files, vectors of mismatched length, ...)."""
