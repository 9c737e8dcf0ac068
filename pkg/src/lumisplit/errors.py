"""Exception types shared across modules (CLI maps these to exit codes)."""


class DataError(Exception):
    """Dataset is missing, malformed, or internally inconsistent."""


class CheckpointError(Exception):
    """Checkpoint file is missing, corrupt, or incompatible with the config."""
