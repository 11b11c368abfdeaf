"""Exception hierarchy shared by the numerical modules and the CLI."""


class LabError(Exception):
    """Base class for all errors raised by the package."""


class ConfigError(LabError, ValueError):
    """Invalid geometry, configuration or argument."""


class NumericalError(LabError, RuntimeError):
    """A numerical stage failed (integration, eigensolve, quadrature...)."""

    def __init__(self, message, stage=None):
        super().__init__(message)
        self.stage = stage


class IntegrationFailure(NumericalError):
    pass


class NoSolutionError(NumericalError):
    pass


class TruncationError(NumericalError):
    """Spherical-harmonic truncation too small for the requested accuracy."""


class DerivativeUnreliable(NumericalError):
    pass


class QuadratureError(NumericalError):
    pass


class LandscapeBoundaryError(NumericalError):
    pass


class InvariantViolation(LabError):
    """A verified property did not hold."""
