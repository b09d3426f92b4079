"""Exception types shared across the package."""


class DefectLoopError(Exception):
    """Base class for all package errors."""


class ValidationError(DefectLoopError, ValueError):
    """Input violates a documented precondition or invariant."""


class ConfigurationError(DefectLoopError):
    """Inconsistent component configuration (shape mismatch, bad config)."""


class InsufficientPoolError(DefectLoopError):
    """A batch of n samples was requested from a pool with fewer than n."""


class DataError(DefectLoopError):
    """A sample or feature lookup failed, or stored data is inconsistent."""


class SampleNotFoundError(DataError, KeyError):
    """Unknown sample id."""


class LabelConflictError(DataError):
    """Attempt to relabel a sample whose label is already committed."""


class TrainingDivergedError(DefectLoopError):
    """NaN or Inf appeared in gradients or weights during training.

    Carries the epoch index at which divergence was detected.
    """

    def __init__(self, epoch: int, message: str = ""):
        self.epoch = epoch
        super().__init__(message or f"training diverged at epoch {epoch}")


class RunCompleteError(DefectLoopError):
    """Terminal signal: the pool is exhausted, no further query possible."""
