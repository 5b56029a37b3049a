"""Exception types raised across the package."""


class ReconAwareError(Exception):
    """Base class for all package errors."""


class DegenerateCloud(ReconAwareError):
    pass


class SingularKernel(ReconAwareError):
    pass


class EmptySurface(ReconAwareError):
    pass


class EmptyQuery(ReconAwareError):
    pass


class NoPlane(ReconAwareError):
    pass


class NoObject(ReconAwareError):
    pass


class BadLink(ReconAwareError):
    pass


class Infeasible(ReconAwareError):
    """Raised by callers that need a converged solve; carries the report."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class NoFeasibleGrasp(ReconAwareError):
    pass


class AllInfeasible(ReconAwareError):
    pass


class NoGoalReached(ReconAwareError):
    pass


class TooFewElites(ReconAwareError):
    pass


class SamplingStalled(ReconAwareError):
    pass


class NoHeadroom(ReconAwareError):
    pass


class EmptyRecon(ReconAwareError):
    pass
