"""Exception types shared across the package."""


class NonlocalError(Exception):
    """Base class for all package errors."""


class HypothesisViolation(NonlocalError, ValueError):
    """A theorem's hypothesis does not hold for the given instance."""


class Inconclusive(NonlocalError, RuntimeError):
    """The numerical budget ran out before a decision could be made."""


class NonConvergence(NonlocalError, RuntimeError):
    """An iterative method failed to reach its tolerance."""


class UnsupportedShape(NonlocalError, ValueError):
    pass


class InfiniteWeight(NonlocalError, ValueError):
    pass


class RadiusTooSmall(NonlocalError, ValueError):
    pass


class NotALatticePoint(NonlocalError, ValueError):
    pass


class PreconditionViolation(NonlocalError, ValueError):
    pass


class PathConstructionError(NonlocalError, AssertionError):
    """An internal invariant of the lattice path recursion failed (a bug)."""


class CapExceeded(NonlocalError, RuntimeError):
    pass


class InsufficientPositivity(NonlocalError, RuntimeError):
    """Sampling found too few well-conditioned positive kernel directions."""


class CertificationFailure(NonlocalError, RuntimeError):
    def __init__(self, message, link=None):
        super().__init__(message)
        self.link = link
