"""Exception types shared across the toolkit."""


class KinfaceError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(KinfaceError, ValueError):
    """Input data violates a documented invariant or precondition."""


class ManifestError(KinfaceError):
    """A dataset manifest could not be located or decoded."""


class ShapeError(KinfaceError, ValueError):
    """Tensor/vector shape does not match the configured network."""


class DegenerateInputError(KinfaceError, ValueError):
    """Numerically degenerate input (e.g. zero-variance vector)."""


class DependencyError(KinfaceError):
    """A training step was requested without its prerequisite checkpoint."""


class DivergenceError(KinfaceError):
    """Training produced a non-finite loss.

    Carries the last good checkpoint (or its path) when one exists.
    """

    def __init__(self, message, checkpoint=None):
        super().__init__(message)
        self.checkpoint = checkpoint


class FrozenContractError(KinfaceError):
    """A network that must be frozen still has trainable parameters."""


class ProtocolError(KinfaceError, ValueError):
    """Evaluation protocol bookkeeping is inconsistent (e.g. mixed embedding sizes)."""


class NumericalError(KinfaceError):
    """A metric could not be computed stably (e.g. degenerate covariance)."""
