"""Exception types shared across the package."""


class FreeboundError(Exception):
    """Base class for all package errors."""


class BallOutsideGrid(FreeboundError):
    """A ball-shaped quadrature or rescaling region sticks out of the grid box."""


class ScaleBelowGrid(FreeboundError):
    """A rescaling radius is too small to be resolved (r < 4h)."""


class EmptyDomain(FreeboundError):
    """A PDE solve was requested on a domain with no active nodes."""


class NoConvergence(FreeboundError):
    """The iterative linear solver failed to reach the requested residual."""

    def __init__(self, residual: float, iterations: int):
        self.residual = residual
        self.iterations = iterations
        super().__init__(
            f"linear solve stalled at relative residual {residual:.3e} "
            f"after {iterations} iterations"
        )


class MissingDerivatives(FreeboundError):
    """An analytic data field lacks the derivative order needed here."""


class NotHarmonic(FreeboundError):
    """A field fed to the one-phase variation machinery is not harmonic
    on its positivity set (within the stated residual tolerance)."""


class StepCollapse(FreeboundError):
    """The evolving domain vanished during shape descent."""


class NoDescent(FreeboundError):
    """Backtracking exhausted: no step length decreased the energy."""


class ConfigError(FreeboundError):
    """A run configuration failed validation."""
