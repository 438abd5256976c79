"""Exception hierarchy shared by all modules."""


class ArtifactError(Exception):
    """Base class for errors raised by the toolkit."""


class InvalidArgumentError(ArtifactError, ValueError):
    """An argument violates a documented precondition."""


class DegenerateChartError(ArtifactError):
    """The chart Jacobian is rank deficient at a sample point."""


class InadmissibleHeightError(ArtifactError):
    """A height function exceeds the admissible bound on the reference surface."""


class OutOfTubeError(ArtifactError):
    """A query point lies outside the tubular neighborhood."""


class NumericalFailureError(ArtifactError):
    """An iterative solver did not converge."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class NotAGraphError(ArtifactError):
    """A target surface is not a normal graph over the reference surface."""

    def __init__(self, message, point=None):
        super().__init__(message)
        self.point = point


class ClosenessViolatedError(ArtifactError):
    """The mollified level function lost monotonicity along a normal line."""


class FlowBlowupError(ArtifactError):
    """A flow left the admissible set; the last valid state is attached."""

    def __init__(self, message, last_state=None):
        super().__init__(message)
        self.last_state = last_state


class VariationNotImplementedError(ArtifactError, NotImplementedError):
    """A closed-form variation is only available at zero height for this quantity."""
