"""Exception types shared across the package."""


class VirtualImuError(Exception):
    """Base class for all errors raised by this package."""


class PoseParseError(VirtualImuError):
    """Malformed keypoint file (bad JSON, wrong field types)."""


class PoseSchemaError(VirtualImuError):
    """Structurally valid file violating the keypoint schema (e.g. wrong keypoint count)."""


class OrderingError(VirtualImuError):
    """Timestamps not strictly increasing."""


class UnrecoverableGapError(VirtualImuError):
    """A required keypoint has no valid detection anywhere in the sequence."""


class DegeneratePoseError(VirtualImuError):
    """Too few valid keypoints (or zero vertical extent) to measure pose size."""


class ParameterError(VirtualImuError, ValueError):
    """Invalid parameter value (bad cutoff, rate, threshold...)."""


class TooShortError(VirtualImuError):
    """Input series shorter than the operation requires."""


class ShapeError(VirtualImuError):
    """Array shape violates an operation's contract."""


class ConfigError(VirtualImuError):
    """Inconsistent model or run configuration."""


class StateError(VirtualImuError):
    """Operation applied to data in the wrong state (e.g. double standardization)."""


class DivergenceError(VirtualImuError):
    """Training produced a non-finite loss."""


class CheckpointError(VirtualImuError):
    """Corrupt or truncated checkpoint/serialization file."""


class CheckpointVersionError(CheckpointError):
    """Checkpoint version or config hash does not match."""


class LeakageError(VirtualImuError):
    """Held-out subject data found in a training input."""


class DataError(VirtualImuError):
    """Dataset-level inconsistency (missing files, misaligned streams)."""
