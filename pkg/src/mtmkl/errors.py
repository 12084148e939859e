"""Exception hierarchy shared by every module of the package."""


class MtmklError(Exception):
    """Base class for all errors raised by mtmkl."""


class InputError(MtmklError, ValueError):
    """Malformed or out-of-contract arguments."""


class DegenerateSampleError(InputError):
    """A sample has (numerically) zero self-similarity under some kernel."""

    def __init__(self, message, sample=None, kernel=None):
        super().__init__(message)
        self.sample = sample
        self.kernel = kernel


class UnlearnableTaskError(MtmklError):
    """A binary task whose training labels contain a single class."""


class ConvergenceError(MtmklError):
    """An iterative solver hit its iteration cap.

    ``best`` carries the last (or best) iterate so callers may still use it.
    """

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class ParseError(MtmklError):
    def __init__(self, message, line=None, path=None):
        where = ""
        if path is not None:
            where += f"{path}:"
        if line is not None:
            where += f"{line}: "
        super().__init__(where + message)
        self.line = line
        self.path = path


class SplitError(MtmklError):
    pass


class ConstructionError(MtmklError):
    pass


class ContractError(MtmklError):
    """A model or state violates an invariant it is required to satisfy."""


class GridError(MtmklError):
    """Every point of a hyperparameter grid failed."""

    def __init__(self, message, failures=None):
        super().__init__(message)
        self.failures = failures or {}
