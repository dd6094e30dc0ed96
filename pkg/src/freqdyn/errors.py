"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """A build-time or call-time configuration is invalid (shapes, fractions, keys)."""


class CheckpointError(IOError):
    """A checkpoint file is malformed, truncated, or from an unknown version."""


class TrainingDiverged(RuntimeError):
    """Training hit a non-finite loss; carries diagnostics for the failing step."""

    def __init__(self, message: str, epoch: int, batch: int, diagnostics: dict):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch
        self.diagnostics = diagnostics
