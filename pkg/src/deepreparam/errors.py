"""Exception hierarchy shared by all modules."""


class ReparamError(Exception):
    """Base class for all errors raised by this package."""


class ParseError(ReparamError):
    """Malformed or unsupported input file."""


class InvalidGrid(ReparamError):
    """Sample grid violates size or spacing requirements."""


class DegenerateCurve(ReparamError):
    """The curve is not an immersion (vanishing velocity)."""


class DegenerateSurface(ReparamError):
    """The surface is not an immersion (vanishing area factor)."""


class GridMismatch(ReparamError):
    """Two sampled objects do not live on the same grid."""


class VanishingCombination(ReparamError):
    """A convex combination of SRVTs vanishes, so it cannot be inverted."""

    def __init__(self, tau, node, message=None):
        self.tau = tau
        self.node = node
        super().__init__(message or f"combination vanishes at tau={tau:g}, node {node}")


class InfeasibleLayer(ReparamError):
    """A layer's weights violate the Lipschitz feasibility bound."""


class NearSingularDerivative(ReparamError):
    """The warp derivative is too close to zero to differentiate its square root."""


class StagnatedStep(ReparamError):
    """Gradient descent found no feasible step that decreases the loss.

    The partially optimized network and its log are attached so callers can
    still use the result.
    """

    def __init__(self, message, net=None, log=None):
        super().__init__(message)
        self.net = net
        self.log = log
