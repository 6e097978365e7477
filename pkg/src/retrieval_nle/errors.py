"""Exception types shared across the package."""


class ValidationError(ValueError):
    """Bad input: wrong shapes, malformed files, invalid configuration."""


class TrainingDiverged(RuntimeError):
    """Raised when the loss or a gradient stops being finite."""
