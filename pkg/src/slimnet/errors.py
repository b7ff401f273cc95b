"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operands do not conform to an operation's shape rule."""


class GraphError(RuntimeError):
    """Misuse of the autodiff graph (non-scalar loss, freed graph, ...)."""


class MissingGradError(RuntimeError):
    """A parameter update was requested for a tensor without a gradient."""


class WidthError(ValueError):
    """Invalid width ratio, divisor, or sampling-rule configuration."""


class PlanError(ValueError):
    """Inconsistent training-plan settings."""


class CalibrationError(RuntimeError):
    """Missing or invalid batch-norm statistics for a requested width."""


class CheckpointError(RuntimeError):
    """Unreadable, truncated, or version-incompatible checkpoint file."""


class DataError(ValueError):
    """Malformed dataset file or invalid dataset request."""


class TrainingDiverged(RuntimeError):
    """Loss became non-finite during training."""
