"""Exception types shared across the package."""


class DatasetError(Exception):
    """A dataset directory is missing, inconsistent, or fails validation."""


class InsufficientDataError(DatasetError):
    """A class does not have enough labelled samples for the requested subset."""


class ConfigError(Exception):
    """A configuration value or combination of values is invalid."""


class CheckpointError(Exception):
    """A checkpoint directory is missing, inconsistent, or fails validation."""


class TrainingDivergedError(RuntimeError):
    """Training produced non-finite gradients or losses."""
