"""Exception hierarchy shared across the package."""


class HGNBError(Exception):
    """Base class for all package errors."""


class DataError(HGNBError, ValueError):
    """Malformed or inconsistent input data."""


class NumericalError(HGNBError, ArithmeticError):
    """A numerical failure: non-finite values, non-SPD precision, etc."""


class CheckpointError(HGNBError):
    """Missing, truncated, corrupt or incompatible checkpoint file."""


class InfeasibleTargetError(HGNBError, ValueError):
    """Requested simulation target cannot be reached."""
