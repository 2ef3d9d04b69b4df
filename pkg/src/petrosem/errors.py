"""Exception hierarchy for petrosem."""


class PetrosemError(Exception):
    """Base class for all errors raised by this package."""


class InputError(PetrosemError, ValueError):
    """An argument violates a documented precondition."""


class NumericalInputError(InputError):
    """Non-finite data was passed where finite values are required."""


class NumericalError(PetrosemError, ArithmeticError):
    """A numerical routine failed (e.g. the eigensolver did not converge)."""


class IllConditionedError(NumericalError):
    """Interpolation nodes are too close to be treated as distinct."""


class ContourResolutionError(NumericalError):
    """Trapezoid quadrature on the contour did not stabilise."""


class ClearanceError(InputError):
    """A point that must stay clear of the spectrum is too close to it."""


class ContractViolationError(PetrosemError):
    """A computed result failed its own post-condition check."""


class ConsistencyError(NumericalError):
    """Two independent computations of the same quantity disagree."""


class InfeasibleError(NumericalError):
    """No certificate exists for the requested parameters."""


class CertificateInvalidError(PetrosemError):
    """A weight certificate failed verification."""


class ExpOverflowError(NumericalError, OverflowError):
    """The exponential would overflow; ``scaled`` carries ``(E, log_offset)``.

    ``E * exp(log_offset)`` is the requested exponential.
    """

    def __init__(self, msg, scaled):
        super().__init__(msg)
        self.scaled = scaled
