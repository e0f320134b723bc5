"""Exception hierarchy shared by the solver modules."""


class SpirkError(Exception):
    """Base class for all errors raised by :mod:`spirk`."""


class TableauError(SpirkError, ValueError):
    """Invalid scheme, stage count or coefficient data."""


class SymmetryError(TableauError):
    """A tableau fails one of the reflection identities of a symmetric scheme."""


class TransformError(SpirkError):
    """The W-transformation produced a non-diagonal normalisation matrix."""


class EigenError(SpirkError):
    """Dense eigendecomposition failed."""


class SpectralClashError(SpirkError, ArithmeticError):
    """The spectra of the two coefficients of a Sylvester equation intersect."""


class SingularShiftError(SpirkError, ArithmeticError):
    """A shifted matrix ``M + h*lambda*L`` could not be factorised."""

    def __init__(self, index, shift, msg=None):
        self.index = index
        self.shift = shift
        super().__init__(msg or f"shifted matrix for stage {index} (shift {shift}) is singular")


class ConvergenceError(SpirkError, RuntimeError):
    """An iteration stopped at its cap without meeting its tolerance."""

    def __init__(self, msg, residual=None, iterations=None):
        self.residual = residual
        self.iterations = iterations
        super().__init__(msg)
