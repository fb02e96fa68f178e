"""Exception types shared across the package."""


class RangeError(ValueError):
    """A parameter lies outside its admissible range."""


class DomainError(ValueError):
    """A function was evaluated outside its domain."""


class PreconditionError(ValueError):
    """An operation was called without its documented preconditions."""


class ResolutionError(ValueError):
    """A grid or quadrature is too coarse for the requested quantity."""


class InsufficientDataError(ValueError):
    """Too few usable samples to fit a decay law."""


class HypothesisViolation(ValueError):
    """Input data violates a hypothesis of the check being run."""

    def __init__(self, hypothesis, detail=""):
        self.hypothesis = hypothesis
        self.detail = detail
        super().__init__(f"hypothesis {hypothesis} violated: {detail}")
