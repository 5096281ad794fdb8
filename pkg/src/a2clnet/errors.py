"""Exception hierarchy.

Every error raised on purpose by the package derives from ``A2CLNetError``.
The CLI maps the three families below onto exit codes 1, 2 and 3.
"""


class A2CLNetError(Exception):
    exit_code = 3


class ConfigurationError(A2CLNetError, ValueError):
    """Bad user configuration: unknown names, out-of-range settings."""

    exit_code = 1


class DataError(A2CLNetError, ValueError):
    """Problems with input data files or their contents."""

    exit_code = 2


class InputError(DataError):
    """Input arrays or sequences that cannot be processed (empty, too short)."""


class ShapeError(A2CLNetError, ValueError):
    exit_code = 3


class DomainError(A2CLNetError, ValueError):
    """Arguments outside a function's mathematical domain."""

    exit_code = 2


class NonFiniteError(A2CLNetError, FloatingPointError):
    """A NaN or Inf showed up where only finite values are allowed."""

    def __init__(self, message, where=None):
        super().__init__(message)
        self.where = where


class TrainingDiverged(NonFiniteError):
    pass


class CheckpointError(A2CLNetError):
    exit_code = 2


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointShapeError(CheckpointError, ShapeError):
    exit_code = 2


class CheckpointCorruptError(CheckpointError):
    pass


class InternalError(A2CLNetError):
    """A broken internal invariant (a bug, not a user or data problem)."""

    exit_code = 3
