"""Exception types shared across the toolkit."""


class EngageError(Exception):
    """Base class for all toolkit errors."""


class NoSamplesError(EngageError):
    """A metric was requested over an empty (or fully excluded) sample."""


class SingularDesignError(EngageError):
    """Regression design matrix is rank deficient."""


class InsufficientTailError(EngageError):
    """Too few samples at or above x_min for a tail fit."""


class DegenerateLikelihoodError(EngageError):
    """Likelihood has no interior maximum (e.g. all observations equal)."""


class DegenerateLabelsError(EngageError):
    """Training data contains only one class."""


class TrainingDivergedError(EngageError):
    """Loss became non-finite during training."""

    def __init__(self, epoch: int):
        super().__init__(f"loss diverged at epoch {epoch}")
        self.epoch = epoch


class ModelFormatError(EngageError):
    """Model file is corrupt or has an unsupported format version."""


class BudgetMismatchError(EngageError):
    """Scoring context budget differs from the budget used in training."""


class ScorerError(EngageError):
    """Base class for scorer failures."""


class ScoreOutOfRangeError(ScorerError):
    """A scorer produced a value outside [0, 1]."""


class ScorerTransportError(ScorerError):
    """Remote scorer transport failure (connection, protocol)."""


class ScorerTimeoutError(ScorerTransportError):
    """Remote scorer did not answer within the deadline."""


class GenerationError(EngageError):
    """Candidate generation failed."""

    def __init__(self, message: str, n_succeeded: int = 0):
        super().__init__(message)
        self.n_succeeded = n_succeeded


class CalibrationError(EngageError):
    """Simulator calibration could not reach its target."""

    def __init__(self, message: str, best_residual: float):
        super().__init__(f"{message} (best residual {best_residual:.4g})")
        self.best_residual = best_residual


class ConfigError(EngageError):
    """Invalid configuration."""
