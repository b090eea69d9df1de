class FufiError(Exception):
    """Base class for errors raised by this package."""


class ShapeError(FufiError, ValueError):
    """Array dimensions violate an operation's contract."""


class DatasetFormatError(FufiError, ValueError):
    """A dataset directory or checkpoint file is malformed."""


class DivergenceError(FufiError, RuntimeError):
    """Training produced a non-finite loss."""
