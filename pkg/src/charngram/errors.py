"""Exception types shared across the package.

The CLI maps these onto exit codes: DataError (and subclasses) exit 2,
NumericalError exits 3, argument problems exit 1.
"""


class DataError(ValueError):
    """Bad input data: malformed files, empty datasets, mismatched structures."""


class ModelFormatError(DataError):
    """A model file that cannot be parsed: bad magic, truncation, bad version."""


class NumericalError(RuntimeError):
    """Training produced a non-finite parameter value."""
