"""Pose-keypoint ingestion and body-center track estimation.

Input files hold one pose sequence each (JSON): 17 COCO-ordered keypoints
per frame with confidences. This module repairs low-confidence detections,
locates the hip midpoint used as the sensor reference point, and converts
the 2D track plus projected pose size into a metric 3D center track.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field, replace
from typing import BinaryIO, Iterable, Sequence

import numpy as np

from .errors import (
    DegeneratePoseError,
    OrderingError,
    ParameterError,
    PoseParseError,
    PoseSchemaError,
    UnrecoverableGapError,
)

N_KEYPOINTS = 17

COCO_KEYPOINT_NAMES = (
    "nose", "left_eye", "right_eye", "left_ear", "right_ear",
    "left_shoulder", "right_shoulder", "left_elbow", "right_elbow",
    "left_wrist", "right_wrist", "left_hip", "right_hip",
    "left_knee", "right_knee", "left_ankle", "right_ankle",
)

LEFT_HIP = 11
RIGHT_HIP = 12

ACTIVITIES = ("Cleaning", "Climbing", "FloorWork", "Painting", "Walking", "HandsUp")

DEFAULT_CONF_THRESHOLD = 0.3
DEFAULT_SUBJECT_HEIGHT = 1.75  # meters


@dataclass(frozen=True)
class PoseFrame:
    """One video frame: timestamp plus a (17, 3) array of (u, v, confidence)."""

    timestamp: float
    keypoints: np.ndarray

    def __post_init__(self):
        kp = np.asarray(self.keypoints, dtype=float)
        if kp.shape != (N_KEYPOINTS, 3):
            raise PoseSchemaError(
                f"frame at t={self.timestamp}: expected {N_KEYPOINTS}x3 keypoints, "
                f"got shape {kp.shape}"
            )
        if not np.isfinite(kp).all():
            raise PoseSchemaError(f"frame at t={self.timestamp}: non-finite keypoint value")
        conf = kp[:, 2]
        if (conf < 0).any() or (conf > 1).any():
            raise PoseSchemaError(f"frame at t={self.timestamp}: confidence outside [0,1]")
        object.__setattr__(self, "keypoints", kp)


@dataclass
class PoseSequence:
    subject_id: str
    activity_label: str
    frame_rate: float
    frames: list[PoseFrame] = field(default_factory=list)

    def __post_init__(self):
        if self.frame_rate <= 0:
            raise PoseSchemaError(f"frame_rate must be positive, got {self.frame_rate}")
        if self.activity_label not in ACTIVITIES:
            raise PoseSchemaError(
                f"unknown activity {self.activity_label!r}; expected one of {ACTIVITIES}"
            )
        ts = np.array([f.timestamp for f in self.frames])
        if len(ts) > 1 and not (np.diff(ts) > 0).all():
            bad = int(np.flatnonzero(np.diff(ts) <= 0)[0]) + 1
            raise OrderingError(f"timestamps not strictly increasing at frame {bad}")

    def keypoint_array(self) -> np.ndarray:
        """All keypoints as one (n_frames, 17, 3) array."""
        return np.stack([f.keypoints for f in self.frames])

    def timestamps(self) -> np.ndarray:
        return np.array([f.timestamp for f in self.frames])

    def __len__(self) -> int:
        return len(self.frames)


@dataclass(frozen=True)
class SubjectCalibration:
    """Projected-size bounds of a subject standing at the near/far ends of the scene."""

    scale_min: float
    scale_max: float
    z_near: float
    z_far: float
    subject_height: float = DEFAULT_SUBJECT_HEIGHT

    def __post_init__(self):
        if not (0 < self.scale_min <= self.scale_max):
            raise ParameterError(
                f"need 0 < scale_min <= scale_max, got {self.scale_min}, {self.scale_max}"
            )
        if not (0 < self.z_near < self.z_far):
            raise ParameterError(f"need 0 < z_near < z_far, got {self.z_near}, {self.z_far}")
        if self.subject_height <= 0:
            raise ParameterError("subject_height must be positive")


@dataclass
class CenterTrack3D:
    """Uniformly sampled (x, y, z) meters of the body center."""

    sample_rate: float
    samples: np.ndarray  # (n, 3)
    subject_id: str
    activity_label: str
    outlier_mask: np.ndarray | None = None  # True where scale was rejected and interpolated

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)
        if self.samples.ndim != 2 or self.samples.shape[1] != 3:
            raise ParameterError(f"samples must be (n, 3), got {self.samples.shape}")

    def __len__(self) -> int:
        return len(self.samples)


def parse_pose_sequence(source: bytes | BinaryIO) -> PoseSequence:
    """Parse one keypoint JSON file into a PoseSequence.

    Schema: {"subject": str, "activity": str, "fps": number,
             "frames": [{"t": seconds, "kp": [[u, v, c] x17]}]}
    """
    if isinstance(source, (bytes, bytearray)):
        raw = bytes(source)
    else:
        raw = source.read()
    try:
        doc = json.loads(raw.decode("utf-8"))
    except UnicodeDecodeError as exc:
        raise PoseParseError(f"keypoint file is not valid UTF-8: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise PoseParseError(
            f"malformed JSON at line {exc.lineno} column {exc.colno} (offset {exc.pos})"
        ) from exc

    if not isinstance(doc, dict):
        raise PoseParseError("top-level JSON value must be an object")
    for key in ("subject", "activity", "fps", "frames"):
        if key not in doc:
            raise PoseParseError(f"missing required field {key!r}")

    frames = []
    for i, rec in enumerate(doc["frames"]):
        if not isinstance(rec, dict) or "t" not in rec or "kp" not in rec:
            raise PoseParseError(f"frame {i}: expected object with 't' and 'kp'")
        kp = np.asarray(rec["kp"], dtype=float)
        if kp.ndim != 2 or kp.shape[0] != N_KEYPOINTS:
            raise PoseSchemaError(
                f"frame {i}: expected {N_KEYPOINTS} keypoints, got {kp.shape[0] if kp.ndim == 2 else kp.shape}"
            )
        if kp.shape[1] != 3:
            raise PoseSchemaError(f"frame {i}: keypoints must be [u, v, c] triples")
        try:
            frames.append(PoseFrame(timestamp=float(rec["t"]), keypoints=kp))
        except PoseSchemaError as exc:
            raise PoseSchemaError(f"frame {i}: {exc}") from exc

    frames.sort(key=lambda f: f.timestamp)
    seq = PoseSequence(
        subject_id=str(doc["subject"]),
        activity_label=str(doc["activity"]),
        frame_rate=float(doc["fps"]),
        frames=frames,
    )
    _check_rate_jitter(seq)
    return seq


def _check_rate_jitter(seq: PoseSequence, tolerance: float = 0.10) -> None:
    """Frame spacing must agree with the declared rate within 10% jitter."""
    ts = seq.timestamps()
    if len(ts) < 2:
        return
    nominal = 1.0 / seq.frame_rate
    dt = np.diff(ts)
    if (np.abs(dt - nominal) > tolerance * nominal).any():
        bad = int(np.argmax(np.abs(dt - nominal)))
        raise OrderingError(
            f"frame spacing {dt[bad]:.4f}s at frame {bad + 1} inconsistent with "
            f"declared rate {seq.frame_rate} Hz (+/-10%)"
        )


def write_pose_sequence(seq: PoseSequence) -> bytes:
    """Inverse of parse_pose_sequence (used by the synthetic generator)."""
    doc = {
        "subject": seq.subject_id,
        "activity": seq.activity_label,
        "fps": seq.frame_rate,
        "frames": [
            {"t": f.timestamp, "kp": [[float(v) for v in row] for row in f.keypoints]}
            for f in seq.frames
        ],
    }
    return json.dumps(doc).encode("utf-8")


def fill_missing(seq: PoseSequence, conf_threshold: float = DEFAULT_CONF_THRESHOLD) -> PoseSequence:
    """Replace low-confidence keypoints by linear interpolation in time.

    Boundary gaps hold the nearest valid value. Replaced confidences are set
    to conf_threshold, so the operation is idempotent. Hip keypoints must be
    valid somewhere in the sequence; other keypoints that are never valid are
    left untouched (downstream size measures skip them).
    """
    if not (0 < conf_threshold < 1):
        raise ParameterError(f"conf_threshold must be in (0,1), got {conf_threshold}")
    if not seq.frames:
        return replace(seq, frames=[])

    kp = seq.keypoint_array()  # (n, 17, 3), a fresh copy
    ts = seq.timestamps()
    valid = kp[:, :, 2] >= conf_threshold

    for hip in (LEFT_HIP, RIGHT_HIP):
        if not valid[:, hip].any():
            raise UnrecoverableGapError(
                f"hip keypoint {hip} ({COCO_KEYPOINT_NAMES[hip]}) has no detection "
                f"above confidence {conf_threshold} in any frame"
            )

    for k in range(N_KEYPOINTS):
        good = valid[:, k]
        if good.all() or not good.any():
            continue
        bad = ~good
        for coord in (0, 1):
            kp[bad, k, coord] = np.interp(ts[bad], ts[good], kp[good, k, coord])
        kp[bad, k, 2] = conf_threshold

    frames = [PoseFrame(timestamp=t, keypoints=kp[i]) for i, t in enumerate(ts)]
    return replace(seq, frames=frames)


def _valid_mask(frame: PoseFrame, conf_threshold: float) -> np.ndarray:
    return frame.keypoints[:, 2] >= conf_threshold


def body_center(frame: PoseFrame, conf_threshold: float = DEFAULT_CONF_THRESHOLD) -> tuple[float, float]:
    """Arithmetic midpoint of the two hip keypoints, in pixels."""
    conf = frame.keypoints[:, 2]
    if conf[LEFT_HIP] < conf_threshold or conf[RIGHT_HIP] < conf_threshold:
        raise DegeneratePoseError(
            "hip keypoints below confidence threshold; run fill_missing first"
        )
    hips = frame.keypoints[[LEFT_HIP, RIGHT_HIP], :2]
    u, v = hips.mean(axis=0)
    return float(u), float(v)


def pose_scale(frame: PoseFrame, conf_threshold: float = DEFAULT_CONF_THRESHOLD) -> float:
    """Vertical extent (max v - min v) over valid keypoints, in pixels.

    Proxy for projected pose size: subjects closer to the camera look larger.
    """
    valid = _valid_mask(frame, conf_threshold)
    if valid.sum() < 2:
        raise DegeneratePoseError(
            f"need >=2 valid keypoints to measure pose size, got {int(valid.sum())}"
        )
    v = frame.keypoints[valid, 1]
    extent = float(v.max() - v.min())
    if extent <= 0:
        raise DegeneratePoseError("zero vertical extent; cannot estimate pose size")
    return extent


def calibrate_subject(
    standing_frames: Sequence[PoseFrame],
    z_near: float,
    z_far: float,
    subject_height: float = DEFAULT_SUBJECT_HEIGHT,
    conf_threshold: float = DEFAULT_CONF_THRESHOLD,
) -> SubjectCalibration:
    """Projected-size bounds from frames of the subject standing near/far."""
    if not standing_frames:
        raise ParameterError("calibrate_subject needs at least one standing frame")
    scales = [pose_scale(f, conf_threshold) for f in standing_frames]
    return SubjectCalibration(
        scale_min=min(scales),
        scale_max=max(scales),
        z_near=z_near,
        z_far=z_far,
        subject_height=subject_height,
    )


def estimate_center_track(
    seq: PoseSequence,
    cal: SubjectCalibration,
    conf_threshold: float = DEFAULT_CONF_THRESHOLD,
) -> CenterTrack3D:
    """Convert a gap-filled pose sequence into a metric 3D center track.

    x, y come from the hip midpoint, scaled per frame by
    subject_height / pose_scale. Depth is inverse-proportional in pose size
    (pinhole: size ~ 1/distance), pinned so that scale_max -> z_near and
    scale_min -> z_far. Frames whose scale falls outside
    [0.5*scale_min, 2*scale_max] are flagged and interpolated from neighbors.
    """
    if not seq.frames:
        raise ParameterError("cannot build a center track from an empty sequence")

    n = len(seq.frames)
    xyz = np.zeros((n, 3))
    outlier = np.zeros(n, dtype=bool)
    lo, hi = 0.5 * cal.scale_min, 2.0 * cal.scale_max

    for i, frame in enumerate(seq.frames):
        s = pose_scale(frame, conf_threshold)
        if not (lo <= s <= hi):
            outlier[i] = True
            continue
        u, v = body_center(frame, conf_threshold)
        m_per_px = cal.subject_height / s
        xyz[i, 0] = u * m_per_px
        xyz[i, 1] = v * m_per_px
        xyz[i, 2] = _depth_from_scale(s, cal)

    if outlier.all():
        raise DegeneratePoseError("every frame's pose scale is an outlier; check calibration")
    if outlier.any():
        good = ~outlier
        idx = np.arange(n)
        for coord in range(3):
            xyz[outlier, coord] = np.interp(idx[outlier], idx[good], xyz[good, coord])

    track = CenterTrack3D(
        sample_rate=seq.frame_rate,
        samples=xyz,
        subject_id=seq.subject_id,
        activity_label=seq.activity_label,
        outlier_mask=outlier,
    )
    if not np.isfinite(track.samples).all():
        raise DegeneratePoseError("non-finite value in center track")
    return track


def _depth_from_scale(s: float, cal: SubjectCalibration) -> float:
    # Linear interpolation in inverse depth (pinhole model). Degenerate
    # calibrations (scale_min == scale_max) map everything to z_near.
    span = cal.scale_max - cal.scale_min
    if span <= 0:
        return cal.z_near
    t = (cal.scale_max - s) / span
    inv = (1.0 - t) / cal.z_near + t / cal.z_far
    # Extreme small-but-accepted scales can extrapolate inverse depth through
    # zero; cap the depth at 4x the calibrated far plane instead.
    inv = max(inv, 1.0 / (4.0 * cal.z_far))
    return 1.0 / inv


def save_center_track(track: CenterTrack3D, path) -> None:
    """CSV with header t,x,y,z plus a JSON sidecar carrying the metadata."""
    times = np.arange(len(track)) / track.sample_rate
    lines = ["t,x,y,z"]
    for t, (x, y, z) in zip(times, track.samples):
        lines.append(f"{float(t)!r},{float(x)!r},{float(y)!r},{float(z)!r}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    meta = {
        "subject": track.subject_id,
        "activity": track.activity_label,
        "rate": track.sample_rate,
    }
    with open(str(path) + ".meta.json", "w", encoding="utf-8") as fh:
        json.dump(meta, fh, sort_keys=True)


def load_center_track(path) -> CenterTrack3D:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != "t,x,y,z":
            raise PoseParseError(f"unexpected center-track header {header!r} in {path}")
        rows = [line.strip().split(",") for line in fh if line.strip()]
    data = np.array([[float(c) for c in row] for row in rows])
    with open(str(path) + ".meta.json", "r", encoding="utf-8") as fh:
        meta = json.load(fh)
    return CenterTrack3D(
        sample_rate=float(meta["rate"]),
        samples=data[:, 1:4],
        subject_id=str(meta["subject"]),
        activity_label=str(meta["activity"]),
    )
