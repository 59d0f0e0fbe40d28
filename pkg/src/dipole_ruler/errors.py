"""Exception hierarchy shared by the simulation and estimation layers."""


class DipoleRulerError(Exception):
    """Base class for all package errors."""


class DomainError(DipoleRulerError, ValueError):
    """An argument lies outside the physical domain of a formula."""


class OutOfRangeError(DipoleRulerError, ValueError):
    """A measured value cannot be inverted on the supported range."""


class DegenerateKernelError(DipoleRulerError, ArithmeticError):
    """The Liouvillian kernel is not one-dimensional."""


class NumericError(DipoleRulerError, ArithmeticError):
    """A linear solve failed or produced a non-finite result."""


class StepSizeError(DipoleRulerError, ArithmeticError):
    """The fixed time step is too large for stable propagation."""


class InconclusiveError(DipoleRulerError):
    """A readout carried no usable spectral features."""


class AmbiguousResultError(DipoleRulerError):
    """Several geometries remain compatible with the readouts.

    Attributes
    ----------
    candidates : list
        Every surviving candidate, so that callers can report them.
    """

    def __init__(self, message, candidates=()):
        super().__init__(message)
        self.candidates = list(candidates)


class EscalationError(DipoleRulerError):
    """Spectral structure stayed unresolved up to the maximum drive."""
