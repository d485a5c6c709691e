"""Exception types shared across the package."""


class EfpError(Exception):
    """Base class for errors raised by this package."""


class DataError(EfpError):
    """Unreadable, malformed, or inconsistent input data."""


class NumericError(EfpError):
    """Numerical failure during training (NaN/Inf loss or gradients)."""


class UnscorableQuery(EfpError):
    """Query has no relevant item in the database and cannot be scored."""
