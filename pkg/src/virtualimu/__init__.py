"""virtualimu: virtual IMU acceleration signals and features from 2D pose sequences.

The pipeline: pose keypoint files -> body-center 3D track -> band-limited
acceleration channels -> 2-second windows -> either statistical features or
a trainable U-Net transformation producing IMU-like signals/features ->
random-forest activity classification under leave-one-subject-out folds.
"""

__version__ = "0.1.0"

from . import errors, evaluate, features, forest, pose, seeding, signals, synth, unet

__all__ = [
    "__version__",
    "errors",
    "evaluate",
    "features",
    "forest",
    "pose",
    "seeding",
    "signals",
    "synth",
    "unet",
]
