"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Tensor or mesh extents do not line up for the requested operation."""


class DegenerateInputError(ValueError):
    """Input has too little variation for the operation (e.g. single point)."""


class DegenerateGradientError(RuntimeError):
    """An attack step rule received an all-zero gradient field."""


class CanonicalRangeError(ValueError):
    """Coordinates fed to the model fall outside the canonical [-1, 1] box."""


class MeshFormatError(ValueError):
    """Malformed OBJ/PLY content."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ConfigError(ValueError):
    """Bad or unknown key in a config file."""


class TrainingDivergedError(RuntimeError):
    """Loss became non-finite during training."""
