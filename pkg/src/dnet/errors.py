"""Exception types shared across the package."""


class DnetError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(DnetError, ValueError):
    """Operands have incompatible dimensions."""


class GraphError(DnetError, ValueError):
    """Autodiff graph contract violated (e.g. backward on a non-scalar)."""


class SingularMatrixError(DnetError, ValueError):
    """Matrix inversion hit a pivot below the singularity threshold."""

    def __init__(self, pivot: float):
        self.pivot = pivot
        super().__init__(f"matrix is numerically singular (pivot magnitude {pivot:.3e})")


class FormatError(DnetError, ValueError):
    """Malformed dataset or checkpoint file."""

    def __init__(self, message: str, offset: int):
        self.offset = offset
        super().__init__(f"{message} (byte offset {offset})")


class ConfigError(DnetError, ValueError):
    """Invalid configuration or CLI arguments."""


class DegenerateDataError(DnetError, ValueError):
    """Dataset cannot be processed (e.g. all-zero channels)."""


class DegenerateOutputError(DnetError, ValueError):
    """Network produced an output the power normalization cannot handle."""


class DivergenceError(DnetError, RuntimeError):
    """Training loss became non-finite."""

    def __init__(self, epoch: int, stage: str = ""):
        self.epoch = epoch
        self.stage = stage
        where = f" in stage '{stage}'" if stage else ""
        super().__init__(f"training diverged at epoch {epoch}{where}")


class CheckpointMismatchError(DnetError, ValueError):
    """Checkpoint dimensions do not match the dataset or requested setup."""
