"""Exception types raised by fdtfit."""


class FDTFitError(Exception):
    """Base class for all errors raised by this package."""


class InvalidInputError(FDTFitError, ValueError):
    """Input has the wrong shape, sign or type."""


class UnsupportedError(FDTFitError, ValueError):
    """Requested model family, observable or derivative order is not supported."""


class MatrixRootError(FDTFitError, ValueError):
    """Matrix is not symmetric positive (semi)definite where a root is required."""


class SingularSystemError(FDTFitError, ValueError):
    """A linear system that must be solved is singular."""


class BlowUpError(FDTFitError, FloatingPointError):
    """Integration produced a non-finite state.

    Attributes
    ----------
    step : int
        Index of the integration step at which the blow-up was detected.
    chain : int or None
        Chain index, when raised from an ensemble run.
    """

    def __init__(self, step, chain=None):
        self.step = int(step)
        self.chain = chain
        msg = f"non-finite state at step {self.step}"
        if chain is not None:
            msg += f" (chain {chain})"
        super().__init__(msg)


class GridMismatchError(FDTFitError, ValueError):
    """Requested lag is not an integer multiple of the sampling interval."""


class SampleSizeError(FDTFitError, ValueError):
    """Not enough samples for a reliable estimate."""


class BracketError(FDTFitError, ValueError):
    """No sign change in the bracket handed to a root finder.

    Attributes
    ----------
    trace : list of (x, f(x))
        Evaluations made before giving up.
    """

    def __init__(self, msg, trace=()):
        self.trace = list(trace)
        super().__init__(msg)


class IncompleteInputError(FDTFitError, ValueError):
    """A required moment or statistic is missing."""
