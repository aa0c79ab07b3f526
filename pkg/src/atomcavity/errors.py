class AtomCavityError(Exception):
    """Base class for errors raised by this package."""


class ValidationError(AtomCavityError, ValueError):
    """Invalid parameters or configuration (CLI exit code 2)."""


class NumericalError(AtomCavityError, RuntimeError):
    """A solve, root-find or fit failed (CLI exit code 3)."""


class ConvergenceError(NumericalError):
    pass


class UntrappedError(NumericalError):
    """Temperature too high for the atom to stay in the dipole trap."""


class BracketError(NumericalError):
    def __init__(self, message, bounds=None):
        super().__init__(message)
        self.bounds = bounds


class FitError(NumericalError):
    pass


class TruncationWarning(UserWarning):
    """Photon-number basis probably too small for the requested drive."""
