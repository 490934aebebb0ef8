"""Exception and warning types shared across the toolkit."""


class DegenflowError(Exception):
    """Base class for toolkit errors."""


class InvalidModulusError(DegenflowError):
    """A continuity modulus failed a structural check (monotonicity, positivity)."""


class HypothesisViolationError(DegenflowError):
    """A model violates one of the structural hypotheses H1-H4.

    The message always names the hypothesis label so callers (and the CLI)
    can surface it.
    """

    def __init__(self, label: str, message: str):
        self.label = label
        super().__init__(f"({label}) {message}")


class CapabilityError(DegenflowError):
    """The requested computation exceeds a documented capability limit."""


class SingularGramianError(DegenflowError):
    """The controllability Gramian is numerically singular."""


class LambdaTooSmallError(DegenflowError):
    """Picard iteration is not contracting; the discount rate must be increased."""


class NotInvertibleError(DegenflowError):
    """The state transform is not invertible (y-gradient bound >= 1)."""


class IterationError(DegenflowError):
    """An iterative solver failed to converge within its budget."""


class CoverageError(DegenflowError):
    """A trajectory left the spatial box covered by a field grid."""


class ConfigError(DegenflowError):
    """A scenario configuration failed validation."""


class BoundaryExtrapolationWarning(UserWarning):
    """A gradient stencil touched the grid boundary and fell back to one-sided."""


class NonOsgoodWarning(UserWarning):
    """The declared growth function does not show a divergent reciprocal integral."""


class AccuracyWarning(UserWarning):
    """A budgeted computation stopped before reaching its target tolerance."""
