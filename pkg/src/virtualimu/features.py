"""Per-window statistics and train-fold standardization.

Seven statistics per channel (avg, med, var, lq, uq, min, max) over the
four channels (x, y, z, tot) give the 28-value vector consumed by the
activity classifiers. Statistics are computed from the sorted samples, so
they are exactly invariant to sample order.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace

import numpy as np

from .errors import ParameterError, ShapeError, StateError
from .signals import CHANNEL_NAMES, Window, WindowSet

STAT_NAMES = ("avg", "med", "var", "lq", "uq", "min", "max")

FEATURE_NAMES = tuple(f"{ch}_{st}" for ch in CHANNEL_NAMES for st in STAT_NAMES)

N_FEATURES = len(FEATURE_NAMES)  # 28


@dataclass
class FeatureVector:
    values: np.ndarray  # (28,), channel-major {x,y,z,tot} x {avg,med,var,lq,uq,min,max}
    subject_id: str
    activity_label: str
    standardized: bool = False

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (N_FEATURES,):
            raise ShapeError(f"feature vector must have {N_FEATURES} values, got {self.values.shape}")
        if not np.isfinite(self.values).all():
            raise ShapeError("non-finite feature value")


def _channel_stats(samples: np.ndarray) -> np.ndarray:
    # Sorting first makes every statistic bit-exactly permutation invariant.
    s = np.sort(np.asarray(samples, dtype=float))
    n = len(s)
    mean = s.sum() / n
    med = 0.5 * (s[(n - 1) // 2] + s[n // 2])
    var = ((s - mean) ** 2).sum() / n  # population variance
    lq, uq = np.percentile(s, [25.0, 75.0])  # linear interpolation between ranks
    return np.array([mean, med, var, lq, uq, s[0], s[-1]])


def compute_features(window: Window) -> FeatureVector:
    """The 28 per-window statistics, channel-major."""
    if window.samples.shape[1] < 1:
        raise ShapeError("empty window")
    values = np.concatenate([_channel_stats(window.samples[c]) for c in range(4)])
    return FeatureVector(
        values=values,
        subject_id=window.subject_id,
        activity_label=window.activity_label,
        standardized=False,
    )


def feature_matrix(vectors: list[FeatureVector]) -> np.ndarray:
    if not vectors:
        raise ParameterError("empty feature list")
    return np.stack([v.values for v in vectors])


def featurize_windows(windows: WindowSet) -> list[FeatureVector]:
    return [compute_features(w) for w in windows]


@dataclass(frozen=True)
class Scaler:
    """Component-wise standardization fitted on fold-train features only."""

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=float))
        object.__setattr__(self, "std", np.asarray(self.std, dtype=float))
        if self.mean.shape != (N_FEATURES,) or self.std.shape != (N_FEATURES,):
            raise ShapeError("scaler mean/std must have 28 components")
        if (self.std <= 0).any():
            raise ParameterError("scaler std must be positive everywhere")


def fit_scaler(train: list[FeatureVector]) -> Scaler:
    """Component-wise mean and population std; zero-std components clamp to 1."""
    if not train:
        raise ParameterError("cannot fit a scaler on an empty training set")
    if any(v.standardized for v in train):
        raise StateError("fit_scaler expects unstandardized feature vectors")
    X = feature_matrix(train)
    mean = X.mean(axis=0)
    std = X.std(axis=0)  # population std
    std = np.where(std > 0, std, 1.0)
    return Scaler(mean=mean, std=std)


def apply_scaler(scaler: Scaler, v: FeatureVector) -> FeatureVector:
    if v.standardized:
        raise StateError("feature vector is already standardized")
    return replace(v, values=(v.values - scaler.mean) / scaler.std, standardized=True)


def invert_scaler(scaler: Scaler, v: FeatureVector) -> FeatureVector:
    if not v.standardized:
        raise StateError("feature vector is not standardized")
    return replace(v, values=v.values * scaler.std + scaler.mean, standardized=False)


def apply_scaler_matrix(scaler: Scaler, X: np.ndarray) -> np.ndarray:
    """Standardize a raw (n, 28) matrix of feature values."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != N_FEATURES:
        raise ShapeError(f"expected (n, {N_FEATURES}) matrix, got {X.shape}")
    return (X - scaler.mean) / scaler.std


def save_features_csv(vectors: list[FeatureVector], path) -> None:
    """One row per window: subject, activity, then the 28 named columns."""
    if not vectors:
        raise ParameterError("no feature vectors to save")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["subject", "activity", *FEATURE_NAMES])
        for v in vectors:
            writer.writerow([v.subject_id, v.activity_label, *[repr(float(x)) for x in v.values]])


def load_features_csv(path, standardized: bool = False) -> list[FeatureVector]:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["subject", "activity", *FEATURE_NAMES]:
            raise ParameterError(f"unexpected feature CSV header in {path}")
        out = []
        for row in reader:
            out.append(
                FeatureVector(
                    values=np.array([float(c) for c in row[2:]]),
                    subject_id=row[0],
                    activity_label=row[1],
                    standardized=standardized,
                )
            )
    return out
