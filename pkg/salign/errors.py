"""
Exception hierarchy for the S-Align Lab.

Every error raised on purpose by the package derives from `SAlignError`, so the
command-line surface can tell configuration problems (exit code 2) from runtime
failures (exit code 3).
"""


class SAlignError(RuntimeError):
    """Base class for all errors raised by the package."""


class ConfigurationError(SAlignError):
    """An experiment, synthesis or batching configuration is invalid."""


class IngestionError(SAlignError):
    """A manifest, frame file or vocabulary could not be read."""


class ShapeError(SAlignError):
    """Tensor shapes or sequence lengths do not line up."""


class EmptyInputError(SAlignError):
    """An operation received a sequence with no valid positions."""


class InfeasibleTargetError(SAlignError):
    """A CTC target cannot be emitted within the available input frames."""


class DegenerateBatchError(SAlignError):
    """A batch is too small for the requested loss (e.g. in-batch negatives)."""


class IncompatibleCheckpointError(SAlignError):
    """A checkpoint was produced by a different model configuration."""


class DivergenceError(SAlignError):
    """Training produced a non-finite loss."""


class PartitionViolationError(SAlignError):
    """A loss reached parameters it is not allowed to update."""
