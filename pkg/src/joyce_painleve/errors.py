"""Exception hierarchy shared by all modules."""


class JoyceError(Exception):
    """Base class for every error raised by the package."""


class NonConvergence(JoyceError):
    """Adaptive quadrature refinement exceeded its depth bound."""


class StepUnderflow(JoyceError):
    """A finite-difference step below the admissible minimum was requested."""


class Blowup(JoyceError):
    """ODE state left the configured ceiling.

    Attributes
    ----------
    param : complex
        Parameter value at the last accepted step.
    state : numpy.ndarray
        State at the last accepted step.
    """

    def __init__(self, message, param=None, state=None):
        super().__init__(message)
        self.param = param
        self.state = state


class DegenerateInput(JoyceError):
    """Input has no meaningful answer (zero polynomial, empty grid, ...)."""


class SingularCurve(JoyceError):
    """The spectral curve degenerates (coincident branch points)."""


class LatticePoint(JoyceError):
    """Argument lies on the period lattice where the function has a pole."""


class OffCurve(JoyceError):
    """Point does not satisfy the curve equation."""


class PoleHit(JoyceError):
    """Evaluation point is at a pole of the requested object."""


class GaugeSingular(JoyceError):
    """The off-diagonal entry used by the gauge transformation vanishes."""


class SheetSingular(JoyceError):
    """Fiber point sits at a branch point (p = 0)."""


class FitRejected(JoyceError):
    """Local pole expansion does not fit the trajectory well enough."""


class NoConvergence(JoyceError):
    """Newton iteration did not converge."""


class DenominatorZero(JoyceError):
    """A closed-form expression is evaluated on its singular locus."""


class JacobianSingular(JoyceError):
    """Coordinate change is not invertible at the requested point."""


class OffLagrangian(JoyceError):
    """Operation only defined on the r = 0 locus was called off it."""


class NoPoleInSpan(JoyceError):
    """No pole was encountered along the trajectory."""


class FamilyMismatch(JoyceError):
    """Operation not defined for the given family."""


class ConfigError(JoyceError):
    """Invalid job configuration."""
