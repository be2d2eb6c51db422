"""Exception types shared across the package."""


class BatsegError(Exception):
    """Base class for all package errors."""


class ShapeError(BatsegError, ValueError):
    """Array shapes violate an operation's contract."""


class InvalidVolumeError(BatsegError, ValueError):
    """Volume payload is malformed (non-finite values, bad length, ...)."""


class InvalidInputError(BatsegError, ValueError):
    """Scalar or structured argument outside its documented domain."""


class FormatError(BatsegError, ValueError):
    """On-disk container is malformed. Carries the byte offset of the problem."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class InvalidConfigError(BatsegError, ValueError):
    """A configuration object violates its invariants."""


class CheckpointError(BatsegError, ValueError):
    """Checkpoint bytes cannot be decoded into a model."""


class GenerationError(BatsegError, ValueError):
    """Synthetic sample geometry is infeasible."""


class UndefinedMetricError(BatsegError, ValueError):
    """A metric is undefined for the given input (e.g. single-class AUC)."""


class FitnessError(BatsegError, RuntimeError):
    """A fitness evaluation failed. Carries the bat index and position."""

    def __init__(self, bat_index: int, position, cause: BaseException, history=None):
        super().__init__(
            f"fitness evaluation failed for bat {bat_index} at position "
            f"{list(position)}: {cause}"
        )
        self.bat_index = bat_index
        self.position = position
        self.history = history


class DataError(BatsegError, RuntimeError):
    """Dataset on disk is missing or inconsistent."""


class NumericError(BatsegError, RuntimeError):
    """A numeric quantity left its valid domain (NaN/Inf loss, ...)."""
