"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operand shapes are incompatible with the requested operation."""


class DomainError(ValueError):
    """A numeric argument lies outside the operation's domain."""


class ConfigError(ValueError):
    """An adapter, model, or experiment configuration is invalid."""


class NotMergeableError(RuntimeError):
    """The adapter's update cannot be folded into the frozen weights."""


class ConvergenceError(RuntimeError):
    """An iterative numeric routine failed to converge."""


class NumericsError(RuntimeError):
    """Non-finite values appeared during computation."""


class TrainingDiverged(RuntimeError):
    """Training produced a non-finite loss."""
