"""Exception and warning types shared across modules."""


class FplfixError(Exception):
    """Base class for toolkit errors."""


class FormatError(FplfixError, ValueError):
    """A file or record does not follow the expected layout."""


class DegenerateInputError(FplfixError, ValueError):
    """Input carries no usable signal (zero vector, flat image, empty map)."""


class ResolutionWarning(UserWarning):
    """Requested operating point is finer than the score counts can resolve."""
