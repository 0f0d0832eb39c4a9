"""Exception hierarchy.

The CLI maps these onto exit codes: ``DataError`` -> 2, ``NumericError`` -> 3.
"""


class MobilityError(Exception):
    """Base class for all errors raised by this package."""


class DataError(MobilityError, ValueError):
    """Input data violates a precondition (shape, alignment, content)."""


class SchemaError(DataError):
    """A mapped column is missing from a tabular input."""


class GapError(DataError):
    """A region series has missing days that cannot be repaired."""

    def __init__(self, region_id, start, stop, message=None):
        self.region_id = region_id
        self.start = start
        self.stop = stop
        if message is None:
            message = f"region {region_id}: unrepaired gap over days {start}..{stop - 1}"
        super().__init__(message)


class ConstantFieldError(DataError):
    """Statistic undefined because the input has zero variance."""

    def __init__(self, message="constant field"):
        super().__init__(message)


class NumericError(MobilityError, ArithmeticError):
    """A numerical routine failed (non-finite values, failed convergence)."""
