"""Exception classes shared across the package.

The CLI maps these onto exit codes: usage problems exit 1, DataError 2,
NumericalError 3.
"""


class DataError(ValueError):
    """Invalid, inconsistent, or unparseable input data."""


class NumericalError(RuntimeError):
    """A numerical routine failed beyond its recovery policy."""
