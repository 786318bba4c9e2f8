"""Deterministic generator of paired pose/IMU recordings with known ground truth.

Each subject-activity take is driven by a hidden smooth 3D hip trajectory
(sums of sinusoids). The virtual IMU records the analytic second derivative
plus a gravity vector rotated by the activity's posture tilt plus white
noise, at 100 Hz. The virtual camera records a pinhole projection of a
17-keypoint stick body around the same trajectory plus pixel jitter, at
25 fps. Because the pose side never sees gravity, the two streams differ by
exactly the structure a transformation model is supposed to learn.

The six archetypes form three pairs with matched per-axis acceleration
amplitude but different oscillation frequency and different gravity tilt:
summary statistics of the video-derived acceleration cannot tell pair
members apart, while the raw waveform (frequency) and the IMU gravity
offsets can. Subject-level amplitude/tempo multipliers make held-out-subject
generalization a real task.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from .errors import ParameterError
from .pose import ACTIVITIES, PoseFrame, PoseSequence, write_pose_sequence
from .seeding import rng_for
from .signals import AccelTrack, Provenance, save_track

GRAVITY = 9.81

# (horizontal, vertical) keypoint offsets as fractions of body height,
# hip midpoint at the origin, image-style y pointing down. The vertical
# extent (eyes to ankles) is exactly 1.0 so the projected pose size of a
# standing subject equals focal * height / depth.
_SKELETON = np.array(
    [
        (0.000, -0.515),   # nose
        (0.030, -0.530),   # left eye
        (-0.030, -0.530),  # right eye
        (0.055, -0.515),   # left ear
        (-0.055, -0.515),  # right ear
        (0.115, -0.425),   # left shoulder
        (-0.115, -0.425),  # right shoulder
        (0.160, -0.270),   # left elbow
        (-0.160, -0.270),  # right elbow
        (0.180, -0.120),   # left wrist
        (-0.180, -0.120),  # right wrist
        (0.065, 0.000),    # left hip
        (-0.065, 0.000),   # right hip
        (0.070, 0.235),    # left knee
        (-0.070, 0.235),   # right knee
        (0.075, 0.470),    # left ankle
        (-0.075, 0.470),   # right ankle
    ]
)


@dataclass(frozen=True)
class ActivityProfile:
    """Oscillation amplitudes (m) / frequencies (Hz) and the posture tilt."""

    x_amp: float
    x_freq: float
    y_amp: float
    y_freq: float
    depth_amp: float
    depth_freq: float
    base_depth: float
    tilt_deg: float


# Pairs (Cleaning, Painting), (Climbing, Walking), (FloorWork, HandsUp) have
# matched per-axis acceleration amplitude A*(2*pi*f)^2 and identical depth
# profiles; only frequency and tilt distinguish the members.
PROFILES: dict[str, ActivityProfile] = {
    "Cleaning": ActivityProfile(0.0439, 1.40, 0.0116, 1.40, 0.35, 0.10, 3.5, 12.0),
    "Painting": ActivityProfile(0.1344, 0.80, 0.0356, 0.80, 0.35, 0.10, 3.5, 32.0),
    "Climbing": ActivityProfile(0.0194, 1.25, 0.0616, 1.25, 0.50, 0.08, 3.5, 20.0),
    "Walking": ActivityProfile(0.0063, 2.20, 0.0199, 2.20, 0.50, 0.08, 3.5, 4.0),
    "FloorWork": ActivityProfile(0.0304, 1.00, 0.0228, 1.00, 0.20, 0.05, 3.5, 58.0),
    "HandsUp": ActivityProfile(0.0105, 1.70, 0.0079, 1.70, 0.20, 0.05, 3.5, -8.0),
}


@dataclass(frozen=True)
class SyntheticConfig:
    n_subjects: int = 4
    duration: float = 40.0  # seconds per take
    fps: float = 25.0
    imu_rate: float = 100.0
    focal_px: float = 900.0
    z_near: float = 2.0
    z_far: float = 5.0
    pose_jitter_px: float = 0.10
    imu_noise_ms2: float = 0.08
    gravity: float = GRAVITY
    height_range: tuple[float, float] = (1.70, 1.82)
    amp_mult_range: tuple[float, float] = (0.82, 1.18)
    freq_mult_range: tuple[float, float] = (0.98, 1.02)
    roll_deg_range: tuple[float, float] = (-4.0, 4.0)
    seed: int = 0

    def __post_init__(self):
        if self.n_subjects < 1:
            raise ParameterError("n_subjects must be >= 1")
        if self.duration < 2.0:
            raise ParameterError("duration must cover at least one window (2 s)")
        if self.pose_jitter_px < 0 or self.imu_noise_ms2 < 0 or self.gravity < 0:
            raise ParameterError("noise and gravity magnitudes must be >= 0")
        if not (0 < self.z_near < self.z_far):
            raise ParameterError("need 0 < z_near < z_far")

    def subject_ids(self) -> list[str]:
        return [f"S{i + 1}" for i in range(self.n_subjects)]


@dataclass(frozen=True)
class SubjectTraits:
    height: float
    amp_mult: float
    freq_mult: float
    roll_deg: float


def subject_traits(cfg: SyntheticConfig, subject_id: str) -> SubjectTraits:
    rng = rng_for(cfg.seed, "subject", subject_id)
    return SubjectTraits(
        height=rng.uniform(*cfg.height_range),
        amp_mult=rng.uniform(*cfg.amp_mult_range),
        freq_mult=rng.uniform(*cfg.freq_mult_range),
        roll_deg=rng.uniform(*cfg.roll_deg_range),
    )


@dataclass(frozen=True)
class ResolvedMotion:
    """Profile with subject multipliers and phases applied."""

    x_amp: float
    x_freq: float
    x_phase: float
    y_amp: float
    y_freq: float
    y_phase: float
    depth_amp: float
    depth_freq: float
    depth_phase: float
    base_depth: float
    g_vec: np.ndarray  # gravity in sensor coordinates


def resolve_motion(cfg: SyntheticConfig, subject_id: str, activity: str) -> ResolvedMotion:
    if activity not in PROFILES:
        raise ParameterError(f"unknown activity {activity!r}")
    prof = PROFILES[activity]
    traits = subject_traits(cfg, subject_id)
    rng = rng_for(cfg.seed, "phase", subject_id, activity)
    phases = rng.uniform(0.0, 2.0 * np.pi, size=3)
    jitter = rng.uniform(0.97, 1.03, size=2)  # small per-take amplitude wobble
    tilt = np.deg2rad(prof.tilt_deg)
    roll = np.deg2rad(traits.roll_deg)
    g = cfg.gravity * np.array(
        [np.sin(roll) * np.cos(tilt), np.sin(tilt), np.cos(roll) * np.cos(tilt)]
    )
    return ResolvedMotion(
        x_amp=prof.x_amp * traits.amp_mult * jitter[0],
        x_freq=prof.x_freq * traits.freq_mult,
        x_phase=phases[0],
        y_amp=prof.y_amp * traits.amp_mult * jitter[1],
        y_freq=prof.y_freq * traits.freq_mult,
        y_phase=phases[1],
        depth_amp=prof.depth_amp,
        depth_freq=prof.depth_freq,
        depth_phase=phases[2],
        base_depth=prof.base_depth,
        g_vec=g,
    )


def _position(motion: ResolvedMotion, t: np.ndarray) -> np.ndarray:
    """Hidden hip trajectory, (3, n) meters."""
    x = motion.x_amp * np.sin(2.0 * np.pi * motion.x_freq * t + motion.x_phase)
    y = motion.y_amp * np.sin(2.0 * np.pi * motion.y_freq * t + motion.y_phase)
    z = motion.base_depth + motion.depth_amp * np.sin(
        2.0 * np.pi * motion.depth_freq * t + motion.depth_phase
    )
    return np.stack([x, y, z])


def _acceleration(motion: ResolvedMotion, t: np.ndarray) -> np.ndarray:
    """Analytic second derivative of the trajectory, (3, n)."""
    wx = 2.0 * np.pi * motion.x_freq
    wy = 2.0 * np.pi * motion.y_freq
    wd = 2.0 * np.pi * motion.depth_freq
    ax = -motion.x_amp * wx**2 * np.sin(wx * t + motion.x_phase)
    ay = -motion.y_amp * wy**2 * np.sin(wy * t + motion.y_phase)
    az = -motion.depth_amp * wd**2 * np.sin(wd * t + motion.depth_phase)
    return np.stack([ax, ay, az])


def _project(cfg: SyntheticConfig, height: float, centers: np.ndarray) -> np.ndarray:
    """Pinhole projection of the stick body at each center, (n, 17, 2) pixels.

    The body is a billboard at the center's depth; the principal point sits
    at (0, 0) so pixel coordinates convert back to meters without a parallax
    term.
    """
    n = centers.shape[1]
    kp_x = centers[0][:, None] + _SKELETON[None, :, 0] * height
    kp_y = centers[1][:, None] + _SKELETON[None, :, 1] * height
    kp_z = centers[2][:, None] * np.ones((n, len(_SKELETON)))
    u = cfg.focal_px * kp_x / kp_z
    v = cfg.focal_px * kp_y / kp_z
    return np.stack([u, v], axis=2)


def generate_subject(
    cfg: SyntheticConfig, subject_id: str, activity: str
) -> tuple[PoseSequence, AccelTrack]:
    """One time-aligned (pose sequence, 100 Hz IMU track) pair."""
    motion = resolve_motion(cfg, subject_id, activity)
    traits = subject_traits(cfg, subject_id)

    # IMU stream: analytic acceleration + tilted gravity + white noise.
    n_imu = int(round(cfg.duration * cfg.imu_rate))
    t_imu = np.arange(n_imu) / cfg.imu_rate
    accel = _acceleration(motion, t_imu) + motion.g_vec[:, None]
    noise = rng_for(cfg.seed, "imu", subject_id, activity).normal(
        0.0, cfg.imu_noise_ms2, size=(3, n_imu)
    ) if cfg.imu_noise_ms2 > 0 else 0.0
    xyz = accel + noise
    tot = np.sqrt((xyz**2).sum(axis=0))
    imu = AccelTrack(
        sample_rate=cfg.imu_rate,
        data=np.vstack([xyz, tot[None, :]]),
        subject_id=subject_id,
        activity_label=activity,
        provenance=Provenance.REAL_IMU,
    )

    # Pose stream: projected body + jitter at video rate.
    n_vid = int(round(cfg.duration * cfg.fps))
    t_vid = np.arange(n_vid) / cfg.fps
    centers = _position(motion, t_vid)
    uv = _project(cfg, traits.height, centers)
    if cfg.pose_jitter_px > 0:
        uv = uv + rng_for(cfg.seed, "pose", subject_id, activity).normal(
            0.0, cfg.pose_jitter_px, size=uv.shape
        )
    conf = np.ones((n_vid, len(_SKELETON), 1))
    kp = np.concatenate([uv, conf], axis=2)
    frames = [PoseFrame(timestamp=float(t_vid[i]), keypoints=kp[i]) for i in range(n_vid)]
    seq = PoseSequence(
        subject_id=subject_id, activity_label=activity, frame_rate=cfg.fps, frames=frames
    )
    return seq, imu


def standing_sweep(cfg: SyntheticConfig, subject_id: str, n_frames: int = 120) -> list[PoseFrame]:
    """Standing frames walking the subject from z_near to z_far (calibration)."""
    traits = subject_traits(cfg, subject_id)
    depths = np.linspace(cfg.z_near, cfg.z_far, n_frames)
    centers = np.stack([np.zeros(n_frames), np.zeros(n_frames), depths])
    uv = _project(cfg, traits.height, centers)
    if cfg.pose_jitter_px > 0:
        uv = uv + rng_for(cfg.seed, "sweep", subject_id).normal(
            0.0, cfg.pose_jitter_px, size=uv.shape
        )
    conf = np.ones((n_frames, len(_SKELETON), 1))
    kp = np.concatenate([uv, conf], axis=2)
    t = np.arange(n_frames) / cfg.fps
    return [PoseFrame(timestamp=float(t[i]), keypoints=kp[i]) for i in range(n_frames)]


def sweep_sequence(cfg: SyntheticConfig, subject_id: str, n_frames: int = 120) -> PoseSequence:
    # Calibration takes reuse a regular activity label; they are flagged as
    # calibration by their file role, not by the label.
    return PoseSequence(
        subject_id=subject_id,
        activity_label="Walking",
        frame_rate=cfg.fps,
        frames=standing_sweep(cfg, subject_id, n_frames),
    )


def generate_corpus(cfg: SyntheticConfig, out_dir) -> dict:
    """Write pose JSON + IMU CSV per subject and activity, plus a manifest.

    Layout: poses/<S>_<activity>.json, imu/<S>_<activity>.csv (+ sidecar),
    calibration/<S>.json, manifest.json. Returns the manifest dict.
    """
    out = Path(out_dir)
    (out / "poses").mkdir(parents=True, exist_ok=True)
    (out / "imu").mkdir(parents=True, exist_ok=True)
    (out / "calibration").mkdir(parents=True, exist_ok=True)

    manifest: dict = {
        "config": {
            **{k: v for k, v in asdict(cfg).items()},
        },
        "activities": list(ACTIVITIES),
        "profiles": {name: asdict(p) for name, p in PROFILES.items()},
        "subjects": {},
        "files": [],
    }
    for subject_id in cfg.subject_ids():
        traits = subject_traits(cfg, subject_id)
        manifest["subjects"][subject_id] = asdict(traits)
        cal_path = out / "calibration" / f"{subject_id}.json"
        cal_path.write_bytes(write_pose_sequence(sweep_sequence(cfg, subject_id)))
        for activity in ACTIVITIES:
            seq, imu = generate_subject(cfg, subject_id, activity)
            pose_path = out / "poses" / f"{subject_id}_{activity}.json"
            pose_path.write_bytes(write_pose_sequence(seq))
            imu_path = out / "imu" / f"{subject_id}_{activity}.csv"
            save_track(imu, imu_path)
            manifest["files"].append(
                {
                    "subject": subject_id,
                    "activity": activity,
                    "poses": str(pose_path.relative_to(out)),
                    "imu": str(imu_path.relative_to(out)),
                }
            )
    with open(out / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)
    return manifest
