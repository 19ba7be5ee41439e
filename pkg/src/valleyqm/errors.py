"""Exception hierarchy shared by all modules."""


class ValleyError(Exception):
    """Base class for every error raised by valleyqm."""


class DegeneratePotential(ValleyError):
    """The potential no longer has two separate minima."""


class CapExceeded(ValleyError):
    """Requested series order exceeds the configured cap."""


class NonRationalEpsilon(ValleyError):
    """Exact arithmetic was requested with an asymmetry that is not rational."""


class ZeroCoefficient(ValleyError):
    """A ratio diagnostic met a vanishing coefficient."""


class PrecisionLoss(ValleyError):
    """The float conversion budget is too small to resolve the coefficients."""


class PoleOfGamma(ValleyError):
    """A Gamma-function argument sits on (or next to) a pole."""


class DivergentIntegral(ValleyError):
    """The requested integral does not converge."""


class IntegerEpsilon(ValleyError):
    """The generic non-perturbative formula does not apply at this integer asymmetry."""


class NoConvergence(ValleyError):
    """An iterative solver failed to converge."""

    def __init__(self, message, last=None):
        super().__init__(message)
        self.last = last


class QuadratureFailure(ValleyError):
    """Numerical quadrature did not reach its error target."""


class NotConverged(ValleyError):
    """Basis enlargement did not converge the requested eigenvalues."""

    def __init__(self, message, previous=None, current=None):
        super().__init__(message)
        self.previous = previous
        self.current = current


class GridTooCoarse(ValleyError):
    """Residual floor of a discretized problem is above the tolerance."""


class ContinuationStalled(ValleyError):
    """Step control failed; ``last_profile`` holds the samples gathered so far."""

    def __init__(self, message, last_profile=None):
        super().__init__(message)
        self.last_profile = last_profile


class InsufficientSamples(ValleyError):
    """Too few samples for stable numerical differentiation."""


class MissingArtifact(ValleyError):
    """An expected output artifact does not exist."""
