"""
Exception hierarchy for roadmamba.

Every error raised on purpose by the package derives from RoadMambaError, and
also from the builtin exception that best describes it so callers can catch
either.
"""

from typing import Optional


class RoadMambaError(Exception):
    """Base class for all roadmamba errors."""


class ShapeError(RoadMambaError, ValueError):
    """Tensor extents do not satisfy an operation's contract."""


class GraphError(RoadMambaError, RuntimeError):
    """Autograd graph misuse (non-scalar backward, consumed graph, unknown op)."""


class NumericalError(RoadMambaError, FloatingPointError):
    """A NaN/inf appeared, or a value left its admissible domain."""


class ConfigError(RoadMambaError, ValueError):
    """Invalid configuration value, key, or name."""


class ArchiveError(RoadMambaError, IOError):
    """Malformed or unreadable tensor archive."""


class CheckpointMismatchError(ArchiveError):
    """Checkpoint contents disagree with the instantiated model."""

    def __init__(self, message: str, tensor_name: str):
        super().__init__(message)
        self.tensor_name = tensor_name


class DivergenceError(RoadMambaError, RuntimeError):
    """Training loss became non-finite."""

    def __init__(self, message: str, last_good_checkpoint: Optional[str] = None):
        super().__init__(message)
        self.last_good_checkpoint = last_good_checkpoint
