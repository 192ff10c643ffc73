"""Exception hierarchy for safeeval."""


class SafeEvalError(Exception):
    """Base class for all safeeval errors."""


class ConfigError(SafeEvalError, ValueError):
    """Invalid experiment, bootstrap or improvement configuration."""


class DatasetError(SafeEvalError, ValueError):
    """Empty dataset, impossible split, or malformed dataset file."""


class TerminalStateError(SafeEvalError, ValueError):
    """Attempt to step the environment from a terminal state."""


class NoOverlapError(SafeEvalError):
    """All final importance weights are zero, so the estimate is undefined."""


class EstimatorUnstableError(SafeEvalError):
    """Too many bootstrap resamples failed to produce an estimate."""


class SnapshotError(SafeEvalError, ValueError):
    """Unreadable or malformed policy snapshot or learner checkpoint."""
