"""Exception types shared across the package.

The CLI maps these onto process exit codes: usage problems exit 1,
data/input problems exit 2, divergence and failed numeric checks exit 3.
"""


class InputError(ValueError):
    """Malformed in-memory input: bad index, dimension mismatch, bad flag."""


class DataError(ValueError):
    """Problem with an on-disk dataset or cache."""

    def __init__(self, message, path=None, line=None):
        ctx = ""
        if path is not None:
            ctx = f" [{path}" + (f":{line}" if line is not None else "") + "]"
        super().__init__(message + ctx)
        self.path = path
        self.line = line


class MissingFileError(DataError):
    pass


class ShapeMismatchError(DataError):
    pass


class SplitOverlapError(DataError):
    pass


class StaleCacheError(DataError):
    """Hop cache does not match the dataset it is being used with."""


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss."""
