"""Exception types shared across the package."""


class ConfigError(Exception):
    """A configuration value or file is invalid."""


class DataError(Exception):
    """An input image or annotation record cannot be used."""


class StateError(Exception):
    """An operation was invoked on an object in the wrong state."""


class NumericalError(Exception):
    """A computation produced non-finite values."""


class TrainingAborted(Exception):
    """Training stopped on a non-finite loss; carries the last good checkpoint."""

    def __init__(self, iteration: int, last_checkpoint: str | None):
        self.iteration = iteration
        self.last_checkpoint = last_checkpoint
        where = last_checkpoint if last_checkpoint else "<no checkpoint written>"
        super().__init__(
            f"non-finite loss at iteration {iteration}; last good checkpoint: {where}"
        )


class CheckpointIntegrityError(Exception):
    """Checkpoint file is unreadable or truncated."""


class CheckpointVersionError(Exception):
    """Checkpoint was written by an incompatible format version."""
