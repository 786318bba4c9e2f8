"""Acceleration channels: differentiation, filtering, resampling, windowing.

Everything here is a pure transform over AccelTrack. The processing
convention throughout the package: video-side tracks are differentiated at
the native 25 Hz and low-passed at 12 Hz; real IMU recordings are resampled
to 25 Hz first (anti-aliased) and then low-passed at 12 Hz.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np
from scipy.signal import butter, filtfilt

from .errors import ParameterError, ShapeError, TooShortError
from .pose import ACTIVITIES, CenterTrack3D

CHANNEL_NAMES = ("x", "y", "z", "tot")

TARGET_RATE = 25.0  # Hz, matched to the video frame rate
LOWPASS_CUTOFF = 12.0  # Hz
WINDOW_SECONDS = 2.0
HOP_SECONDS = 1.0


class Provenance(str, Enum):
    REAL_IMU = "real_imu"
    VIDEO_DERIVED = "video_derived"
    GENERATED = "generated"


@dataclass
class AccelTrack:
    """Four equal-length acceleration channels (x, y, z, tot) at one rate.

    tot is the L2 norm of x, y, z except for generated tracks, where it is
    the model's own output channel.
    """

    sample_rate: float
    data: np.ndarray  # (4, n)
    subject_id: str
    activity_label: str
    provenance: Provenance

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float)
        if self.data.ndim != 2 or self.data.shape[0] != 4:
            raise ShapeError(f"track data must be (4, n), got {self.data.shape}")
        if not np.isfinite(self.data).all():
            raise ShapeError("non-finite acceleration sample")
        if self.sample_rate <= 0:
            raise ParameterError("sample_rate must be positive")
        self.provenance = Provenance(self.provenance)

    @property
    def x(self) -> np.ndarray:
        return self.data[0]

    @property
    def y(self) -> np.ndarray:
        return self.data[1]

    @property
    def z(self) -> np.ndarray:
        return self.data[2]

    @property
    def tot(self) -> np.ndarray:
        return self.data[3]

    def __len__(self) -> int:
        return self.data.shape[1]


def _with_tot(xyz: np.ndarray) -> np.ndarray:
    """Stack (3, n) axes with their L2 norm into a (4, n) block."""
    tot = np.sqrt((xyz**2).sum(axis=0))
    return np.vstack([xyz, tot[None, :]])


@dataclass
class Window:
    """One 2-second analysis segment (4 channels x 50 samples at 25 Hz)."""

    start_time: float
    samples: np.ndarray  # (4, n_samples)
    subject_id: str
    activity_label: str

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)
        if self.samples.ndim != 2 or self.samples.shape[0] != 4:
            raise ShapeError(f"window samples must be (4, n), got {self.samples.shape}")


WindowSet = list[Window]


def differentiate_twice(track: CenterTrack3D) -> AccelTrack:
    """Central second difference of a position track, times rate^2.

    a[i] = (p[i-1] - 2 p[i] + p[i+1]) * rate^2; endpoints replicate the
    nearest interior value so the length is preserved. Exact for quadratics
    at interior samples.
    """
    p = track.samples
    n = len(p)
    if n < 3:
        raise TooShortError(f"need >=3 samples to differentiate twice, got {n}")
    rate2 = track.sample_rate**2
    acc = np.empty_like(p)
    acc[1:-1] = (p[:-2] - 2.0 * p[1:-1] + p[2:]) * rate2
    acc[0] = acc[1]
    acc[-1] = acc[-2]
    return AccelTrack(
        sample_rate=track.sample_rate,
        data=_with_tot(acc.T),
        subject_id=track.subject_id,
        activity_label=track.activity_label,
        provenance=Provenance.VIDEO_DERIVED,
    )


def _zero_phase_lowpass(data: np.ndarray, cutoff: float, rate: float, order: int = 2) -> np.ndarray:
    # filtfilt doubles the effective order: order=2 -> 4th-order zero-phase.
    b, a = butter(order, cutoff, fs=rate)
    return filtfilt(b, a, data, axis=-1)


def lowpass(track: AccelTrack, cutoff: float = LOWPASS_CUTOFF) -> AccelTrack:
    """Zero-phase 4th-order Butterworth low-pass, per channel.

    For non-generated tracks tot is re-derived from the filtered axes so the
    norm invariant survives filtering.
    """
    if cutoff >= track.sample_rate / 2:
        raise ParameterError(
            f"cutoff {cutoff} Hz must be below Nyquist {track.sample_rate / 2} Hz"
        )
    if cutoff <= 0:
        raise ParameterError("cutoff must be positive")
    xyz = _zero_phase_lowpass(track.data[:3], cutoff, track.sample_rate)
    if track.provenance is Provenance.GENERATED:
        tot = _zero_phase_lowpass(track.data[3:4], cutoff, track.sample_rate)
        data = np.vstack([xyz, tot])
    else:
        data = _with_tot(xyz)
    return replace(track, data=data)


def resample(track: AccelTrack, target_rate: float) -> AccelTrack:
    """Resample onto a uniform grid at target_rate by linear interpolation.

    Downsampling first applies a zero-phase anti-aliasing low-pass at
    0.45 * target_rate (8th-order effective; sharper than the 12 Hz shaping
    filter so in-band content is preserved). The output grid spans the
    original duration: n_out = floor((n-1) * target/rate) + 1.
    """
    if target_rate <= 0:
        raise ParameterError("target_rate must be positive")
    if target_rate == track.sample_rate:
        return replace(track, data=track.data.copy())

    data = track.data
    if target_rate < track.sample_rate:
        data = _zero_phase_lowpass(data, 0.45 * target_rate, track.sample_rate, order=4)

    n = data.shape[1]
    if n < 2:
        raise TooShortError("need >=2 samples to resample")
    t_old = np.arange(n) / track.sample_rate
    n_out = int(np.floor((n - 1) * target_rate / track.sample_rate)) + 1
    t_new = np.arange(n_out) / target_rate
    out = np.empty((4, n_out))
    for c in range(4):
        out[c] = np.interp(t_new, t_old, data[c])

    if track.provenance is not Provenance.GENERATED:
        out = _with_tot(out[:3])
    return replace(track, sample_rate=float(target_rate), data=out)


def condition_imu(
    raw: AccelTrack,
    target_rate: float = TARGET_RATE,
    cutoff: float = LOWPASS_CUTOFF,
) -> AccelTrack:
    """Match a real IMU recording to the video-derived representation.

    Downsample to the video rate, then low-pass at the shaping cutoff, in
    that order.
    """
    if raw.provenance is not Provenance.REAL_IMU:
        raise ParameterError(f"condition_imu expects real_imu provenance, got {raw.provenance}")
    return lowpass(resample(raw, target_rate), cutoff)


def make_windows(
    track: AccelTrack,
    length: float = WINDOW_SECONDS,
    hop: float = HOP_SECONDS,
) -> WindowSet:
    """Slice a track into sliding segments; the partial tail is dropped."""
    if length <= 0 or hop <= 0:
        raise ParameterError("window length and hop must be positive")
    win = int(round(length * track.sample_rate))
    step = int(round(hop * track.sample_rate))
    if win < 1 or step < 1:
        raise ParameterError("window/hop shorter than one sample at this rate")
    n = len(track)
    if n < win:
        raise TooShortError(
            f"track has {n} samples, shorter than one {win}-sample window"
        )
    windows = []
    for start in range(0, n - win + 1, step):
        windows.append(
            Window(
                start_time=start / track.sample_rate,
                samples=track.data[:, start : start + win].copy(),
                subject_id=track.subject_id,
                activity_label=track.activity_label,
            )
        )
    return windows


def window_matrix(windows: WindowSet) -> np.ndarray:
    """Stack a WindowSet into an (n, 4, L) array."""
    if not windows:
        raise ParameterError("empty window set")
    return np.stack([w.samples for w in windows])


# --- file formats ---------------------------------------------------------


def save_track(track: AccelTrack, path) -> None:
    """CSV with header t,x,y,z,tot plus a JSON metadata sidecar."""
    times = np.arange(len(track)) / track.sample_rate
    lines = ["t,x,y,z,tot"]
    for i, t in enumerate(times):
        vals = ",".join(repr(float(v)) for v in track.data[:, i])
        lines.append(f"{float(t)!r},{vals}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    meta = {
        "subject": track.subject_id,
        "activity": track.activity_label,
        "rate": track.sample_rate,
        "provenance": track.provenance.value,
    }
    with open(str(path) + ".meta.json", "w", encoding="utf-8") as fh:
        json.dump(meta, fh, sort_keys=True)


def load_track(path) -> AccelTrack:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != "t,x,y,z,tot":
            raise ParameterError(f"unexpected track header {header!r} in {path}")
        rows = [line.strip().split(",") for line in fh if line.strip()]
    data = np.array([[float(c) for c in row] for row in rows]).T  # (5, n)
    with open(str(path) + ".meta.json", "r", encoding="utf-8") as fh:
        meta = json.load(fh)
    return AccelTrack(
        sample_rate=float(meta["rate"]),
        data=data[1:5],
        subject_id=str(meta["subject"]),
        activity_label=str(meta["activity"]),
        provenance=Provenance(meta["provenance"]),
    )


def save_windows(windows: WindowSet, path) -> None:
    """Binary record stream: per window, length-prefixed subject and activity
    ids, f32 start time, u16 samples-per-channel, then 4*L little-endian f32.
    """
    with open(path, "wb") as fh:
        for w in windows:
            sub = w.subject_id.encode("utf-8")
            act = w.activity_label.encode("utf-8")
            if len(sub) > 255 or len(act) > 255:
                raise ParameterError("subject/activity id longer than 255 bytes")
            L = w.samples.shape[1]
            fh.write(struct.pack("<B", len(sub)) + sub)
            fh.write(struct.pack("<B", len(act)) + act)
            fh.write(struct.pack("<fH", w.start_time, L))
            fh.write(w.samples.astype("<f4").tobytes())


def load_windows(path) -> WindowSet:
    windows = []
    with open(path, "rb") as fh:
        blob = fh.read()
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(blob):
            raise ParameterError(f"truncated window stream {path} at offset {pos}")
        chunk = blob[pos : pos + n]
        pos += n
        return chunk

    while pos < len(blob):
        (slen,) = struct.unpack("<B", take(1))
        sub = take(slen).decode("utf-8")
        (alen,) = struct.unpack("<B", take(1))
        act = take(alen).decode("utf-8")
        start, L = struct.unpack("<fH", take(6))
        samples = np.frombuffer(take(4 * 4 * L), dtype="<f4").reshape(4, L).astype(float)
        windows.append(Window(start_time=float(start), samples=samples,
                              subject_id=sub, activity_label=act))
    return windows
