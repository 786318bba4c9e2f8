"""Leave-one-subject-out orchestration and the three-classifier experiment.

For every fold the held-out subject's data must stay out of every training
input: generation models, scalers, and forests. That rule is enforced with
hard LeakageError checks rather than by convention.

The three conditions compared on the held-out subject's real IMU features:
  imu       - forest trained on standardized real IMU features
  generated - forest trained on model-generated (already standardized) features
  video     - forest trained on features computed directly from video-derived
              acceleration (standardized with their own scaler)
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import __version__ as _pkg_version
from .errors import DataError, LeakageError, ParameterError
from .features import (
    FEATURE_NAMES,
    FeatureVector,
    Scaler,
    apply_scaler_matrix,
    feature_matrix,
    featurize_windows,
    fit_scaler,
)
from .forest import ForestConfig, accuracy, predict_matrix, train_forest
from .pose import ACTIVITIES, calibrate_subject, estimate_center_track, fill_missing, parse_pose_sequence
from .seeding import derive_seed
from .signals import (
    Window,
    WindowSet,
    condition_imu,
    differentiate_twice,
    load_track,
    lowpass,
    make_windows,
    window_matrix,
)
from .unet import (
    FEATURE_HEAD,
    SIGNAL_HEAD,
    ModelConfig,
    build_model,
    generate_features,
    generate_signals,
    pad_windows,
    train,
)

CONDITIONS = ("imu", "generated", "video")


@dataclass(frozen=True)
class Fold:
    test_subject: str
    train_subjects: tuple[str, ...]


def loso_folds(subjects: list[str]) -> list[Fold]:
    """One fold per subject; together they partition the subject set."""
    if len(subjects) < 2:
        raise ParameterError("LOSO needs at least 2 subjects")
    if len(set(subjects)) != len(subjects):
        raise ParameterError("duplicate subject ids")
    return [
        Fold(test_subject=s, train_subjects=tuple(t for t in subjects if t != s))
        for s in subjects
    ]


def mse_per_window(pred: np.ndarray, real: np.ndarray) -> float:
    """Mean squared sample-wise error within a segment (or squared scalar error)."""
    pred = np.asarray(pred, dtype=float)
    real = np.asarray(real, dtype=float)
    if pred.shape != real.shape:
        raise ParameterError(f"misaligned shapes {pred.shape} vs {real.shape}")
    return float(np.mean((pred - real) ** 2))


def assert_no_leakage(windows: WindowSet, test_subject: str, context: str) -> None:
    for w in windows:
        if w.subject_id == test_subject:
            raise LeakageError(
                f"window of held-out subject {test_subject} found in {context}"
            )


def fold_seed(master_seed: int, fold_id: str) -> int:
    """Declared per-fold seed splitting function."""
    return derive_seed(master_seed, "fold", fold_id)


# --- dataset ------------------------------------------------------------------


@dataclass
class SubjectData:
    """Aligned (video-derived, conditioned IMU) window pairs for one subject."""

    subject_id: str
    video_windows: WindowSet
    imu_windows: WindowSet

    def __post_init__(self):
        if len(self.video_windows) != len(self.imu_windows):
            raise DataError(
                f"{self.subject_id}: {len(self.video_windows)} video vs "
                f"{len(self.imu_windows)} imu windows"
            )


def load_corpus(corpus_dir) -> dict[str, SubjectData]:
    """Run the full extraction pipeline over a generated corpus directory."""
    root = Path(corpus_dir)
    manifest_path = root / "manifest.json"
    if not manifest_path.exists():
        raise DataError(f"no manifest.json under {root}")
    manifest = json.loads(manifest_path.read_text())
    z_near = manifest["config"]["z_near"]
    z_far = manifest["config"]["z_far"]

    calibrations = {}
    data: dict[str, SubjectData] = {}
    for entry in manifest["files"]:
        subject = entry["subject"]
        if subject not in calibrations:
            cal_path = root / "calibration" / f"{subject}.json"
            cal_seq = fill_missing(parse_pose_sequence(cal_path.read_bytes()))
            calibrations[subject] = calibrate_subject(cal_seq.frames, z_near, z_far)
            data[subject] = SubjectData(subject, [], [])

        seq = fill_missing(parse_pose_sequence((root / entry["poses"]).read_bytes()))
        track = estimate_center_track(seq, calibrations[subject])
        video = make_windows(lowpass(differentiate_twice(track)))

        imu = make_windows(condition_imu(load_track(root / entry["imu"])))
        if len(video) != len(imu):
            raise DataError(
                f"{subject}/{entry['activity']}: window counts differ "
                f"({len(video)} video vs {len(imu)} imu)"
            )
        data[subject].video_windows.extend(video)
        data[subject].imu_windows.extend(imu)
    return data


# --- experiment ---------------------------------------------------------------


@dataclass(frozen=True)
class ExperimentConfig:
    master_seed: int = 7
    encoder_channels: tuple[int, ...] = (8, 16, 32)
    window_len: int = 64
    max_epochs: int = 150
    patience: int = 20
    min_delta: float = 1e-4
    batch_size: int = 32
    n_trees: int = 100
    max_features: int = 6
    threads: int = 1
    train_signal_models: bool = True

    def model_config(self, head: str, seed: int) -> ModelConfig:
        return ModelConfig(
            input_channels=4,
            window_len=self.window_len,
            encoder_channels=self.encoder_channels,
            head=head,
            seed=seed,
        )


@dataclass
class ExperimentReport:
    subjects: list[str]
    accuracy: dict[str, list[float]]                # condition -> per-fold accuracies
    mean_accuracy: dict[str, float]
    signal_mse: np.ndarray                          # (4, 7): activities + mean column
    feature_mse: np.ndarray                         # (28, 7)
    generated_feature_mse: float                    # pooled over folds and features
    naive_feature_mse: float
    config: ExperimentConfig = field(default_factory=ExperimentConfig)
    fold_seeds: dict[str, int] = field(default_factory=dict)


def _labels(windows: WindowSet) -> list[str]:
    return [w.activity_label for w in windows]


def _std_vectors(raw: list[FeatureVector], scaler: Scaler) -> list[FeatureVector]:
    X = apply_scaler_matrix(scaler, feature_matrix(raw))
    return [
        FeatureVector(values=X[i], subject_id=v.subject_id,
                      activity_label=v.activity_label, standardized=True)
        for i, v in enumerate(raw)
    ]


def _train_one_model(args):
    (cfg, head, seed, X_fit, y_fit, X_val, y_val) = args
    model = build_model(cfg.model_config(head, seed))
    train(
        model,
        (X_fit, y_fit),
        (X_val, y_val),
        max_epochs=cfg.max_epochs,
        patience=cfg.patience,
        min_delta=cfg.min_delta,
        batch_size=cfg.batch_size,
    )
    return model


def run_experiment(data: dict[str, SubjectData], cfg: ExperimentConfig = ExperimentConfig()) -> ExperimentReport:
    """The three-classifier LOSO experiment over paired subject data."""
    subjects = sorted(data.keys())
    folds = loso_folds(subjects)
    forest_base = dict(n_trees=cfg.n_trees, max_features=cfg.max_features)

    acc = {cond: [] for cond in CONDITIONS}
    signal_cells: dict = {}   # (channel, activity) -> [sum, count]
    feature_cells: dict = {}  # (feature, activity) -> [sum, count]
    gen_sq, gen_n = 0.0, 0
    naive_sq, naive_n = 0.0, 0
    fold_seeds = {}

    for fold_idx, fold in enumerate(folds):
        fseed = fold_seed(cfg.master_seed, fold.test_subject)
        fold_seeds[fold.test_subject] = fseed
        test = data[fold.test_subject]

        train_video: WindowSet = []
        train_imu: WindowSet = []
        for s in fold.train_subjects:
            train_video.extend(data[s].video_windows)
            train_imu.extend(data[s].imu_windows)
        assert_no_leakage(train_video, fold.test_subject, "generation-model training windows")
        assert_no_leakage(train_imu, fold.test_subject, "generation-model target windows")

        # Rotating validation subject for early stopping (never the test
        # subject). A 2-subject corpus has nothing to hold out: no early stop.
        val_subject = fold.train_subjects[fold_idx % len(fold.train_subjects)]
        if len(fold.train_subjects) > 1:
            val_mask = np.array([w.subject_id == val_subject for w in train_video])
        else:
            val_mask = np.zeros(len(train_video), dtype=bool)
        fit_mask = ~val_mask

        # Fold-train scaler: fitted on train subjects' real IMU features only.
        train_imu_feats = featurize_windows(train_imu)
        assert_no_leakage(train_imu, fold.test_subject, "scaler fit input")
        scaler = fit_scaler(train_imu_feats)
        T_train = apply_scaler_matrix(scaler, feature_matrix(train_imu_feats))

        Xv = pad_windows(window_matrix(train_video), cfg.window_len)
        imu_mat = window_matrix(train_imu)

        # 28 feature-head models + optionally 4 signal-head models, trained in
        # parallel as independent deterministic tasks.
        tasks = []
        for fi, fname in enumerate(FEATURE_NAMES):
            seed = derive_seed(fseed, "feat", fname)
            tasks.append(
                (cfg, FEATURE_HEAD, seed,
                 Xv[fit_mask], T_train[fit_mask, fi],
                 Xv[val_mask], T_train[val_mask, fi])
            )
        if cfg.train_signal_models:
            for ci in range(4):
                seed = derive_seed(fseed, "signal", ci)
                tasks.append(
                    (cfg, SIGNAL_HEAD, seed,
                     Xv[fit_mask], imu_mat[fit_mask][:, ci, :],
                     Xv[val_mask], imu_mat[val_mask][:, ci, :])
                )
        if cfg.threads > 1:
            with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
                models = list(pool.map(_train_one_model, tasks))
        else:
            models = [_train_one_model(t) for t in tasks]
        feat_models = dict(zip(FEATURE_NAMES, models[: len(FEATURE_NAMES)]))
        sig_models = dict(zip(("x", "y", "z", "tot"), models[len(FEATURE_NAMES):]))

        # Per-activity MSE matrices on the held-out subject.
        test_imu_feats = featurize_windows(test.imu_windows)
        T_test = apply_scaler_matrix(scaler, feature_matrix(test_imu_feats))
        gen_test = generate_features(feat_models, test.video_windows)
        G_test = feature_matrix(gen_test)
        acts = np.array(_labels(test.imu_windows))
        sq = (G_test - T_test) ** 2
        for c, act in enumerate(ACTIVITIES):
            mask = acts == act
            if not mask.any():
                continue
            for fi, fname in enumerate(FEATURE_NAMES):
                cell = feature_cells.setdefault((fname, act), [0.0, 0])
                cell[0] += float(sq[mask, fi].sum())
                cell[1] += int(mask.sum())
        gen_sq += float(sq.sum())
        gen_n += sq.size

        # Naive mapping: the video feature itself as the prediction.
        test_video_feats = featurize_windows(test.video_windows)
        video_scaler_train = fit_scaler(featurize_windows(train_video))
        V_test = apply_scaler_matrix(video_scaler_train, feature_matrix(test_video_feats))
        nsq = (V_test - T_test) ** 2
        naive_sq += float(nsq.sum())
        naive_n += nsq.size

        if cfg.train_signal_models:
            gen_windows = generate_signals(sig_models, test.video_windows)
            for gw, rw in zip(gen_windows, test.imu_windows):
                for ci, ch in enumerate(("x", "y", "z", "tot")):
                    cell = signal_cells.setdefault((ch, rw.activity_label), [0.0, 0])
                    cell[0] += mse_per_window(gw.samples[ci], rw.samples[ci])
                    cell[1] += 1

        # Three forests; evaluation always on the held-out subject's real IMU
        # features, standardized with each condition's own scaler space.
        y_train = _labels(train_imu)
        y_test = _labels(test.imu_windows)

        imu_forest = train_forest(
            T_train, y_train,
            ForestConfig(seed=derive_seed(fseed, "rf", "imu"), **forest_base),
        )
        acc["imu"].append(accuracy(imu_forest, T_test, y_test))

        gen_train = generate_features(feat_models, train_video)
        assert_no_leakage(train_video, fold.test_subject, "generated-feature training windows")
        G_train = feature_matrix(gen_train)
        gen_forest = train_forest(
            G_train, _labels(train_video),
            ForestConfig(seed=derive_seed(fseed, "rf", "generated"), **forest_base),
        )
        acc["generated"].append(accuracy(gen_forest, T_test, y_test))

        V_train = apply_scaler_matrix(video_scaler_train, feature_matrix(featurize_windows(train_video)))
        video_forest = train_forest(
            V_train, _labels(train_video),
            ForestConfig(seed=derive_seed(fseed, "rf", "video"), **forest_base),
        )
        acc["video"].append(accuracy(video_forest, apply_scaler_matrix(video_scaler_train, feature_matrix(test_imu_feats)), y_test))

    def pooled(cells, rows):
        table = np.full((len(rows), len(ACTIVITIES) + 1), np.nan)
        for r, key in enumerate(rows):
            tot_s, tot_n = 0.0, 0
            for c, act in enumerate(ACTIVITIES):
                s, n = cells.get((key, act), (0.0, 0))
                if n:
                    table[r, c] = s / n
                tot_s += s
                tot_n += n
            if tot_n:
                table[r, -1] = tot_s / tot_n
        return table

    report = ExperimentReport(
        subjects=[f.test_subject for f in folds],
        accuracy=acc,
        mean_accuracy={cond: float(np.mean(acc[cond])) for cond in CONDITIONS},
        signal_mse=pooled(signal_cells, ("x", "y", "z", "tot")),
        feature_mse=pooled(feature_cells, FEATURE_NAMES),
        generated_feature_mse=gen_sq / gen_n if gen_n else float("nan"),
        naive_feature_mse=naive_sq / naive_n if naive_n else float("nan"),
        config=cfg,
        fold_seeds=fold_seeds,
    )
    return report


# --- rendering ------------------------------------------------------------------


def _fmt(v: float) -> str:
    return "nan" if not np.isfinite(v) else f"{v:.3f}"


def render_report_csv(report: ExperimentReport) -> bytes:
    if not report.subjects:
        raise ParameterError("cannot render an empty report")
    lines = ["section,accuracy"]
    lines.append("subject,imu_input,generated_input,video_input")
    for i, s in enumerate(report.subjects):
        row = ",".join(_fmt(report.accuracy[c][i]) for c in CONDITIONS)
        lines.append(f"{s},{row}")
    mean_row = ",".join(_fmt(report.mean_accuracy[c]) for c in CONDITIONS)
    lines.append(f"Mean,{mean_row}")

    header = "," + ",".join(ACTIVITIES) + ",Mean"
    lines.append("")
    lines.append("section,signal_mse")
    lines.append("signal" + header)
    for r, ch in enumerate(("x", "y", "z", "tot")):
        lines.append(ch + "," + ",".join(_fmt(v) for v in report.signal_mse[r]))

    lines.append("")
    lines.append("section,feature_mse")
    lines.append("feature" + header)
    for r, fname in enumerate(FEATURE_NAMES):
        lines.append(fname + "," + ",".join(_fmt(v) for v in report.feature_mse[r]))
    col_mean = np.nanmean(report.feature_mse, axis=0)
    lines.append("Mean," + ",".join(_fmt(v) for v in col_mean))
    return ("\n".join(lines) + "\n").encode("utf-8")


def render_report_text(report: ExperimentReport) -> bytes:
    if not report.subjects:
        raise ParameterError("cannot render an empty report")
    out = []
    out.append("LOSO accuracy")
    out.append(f"{'subject':<10}{'IMU input':>12}{'Generated':>12}{'Video':>12}")
    for i, s in enumerate(report.subjects):
        out.append(
            f"{s:<10}"
            + "".join(f"{report.accuracy[c][i]:>12.3f}" for c in CONDITIONS)
        )
    out.append(
        f"{'Mean':<10}" + "".join(f"{report.mean_accuracy[c]:>12.3f}" for c in CONDITIONS)
    )

    def table(title, rows, labels):
        out.append("")
        out.append(title)
        out.append(f"{'':<10}" + "".join(f"{a:>11}" for a in (*ACTIVITIES, "Mean")))
        for r, name in enumerate(labels):
            cells = "".join(f"{_fmt(v):>11}" for v in rows[r])
            out.append(f"{name:<10}{cells}")

    table("Generated-signal MSE per activity", report.signal_mse, ("x", "y", "z", "tot"))
    table("Generated-feature MSE per activity", report.feature_mse, FEATURE_NAMES)
    out.append("")
    out.append(f"pooled generated-feature MSE: {_fmt(report.generated_feature_mse)}")
    out.append(f"pooled naive video-feature MSE: {_fmt(report.naive_feature_mse)}")
    return ("\n".join(out) + "\n").encode("utf-8")


def write_report(report: ExperimentReport, out_dir) -> None:
    """report.csv, report.txt and a machine-readable manifest.json."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.csv").write_bytes(render_report_csv(report))
    (out / "report.txt").write_bytes(render_report_text(report))
    manifest = {
        "version": f"virtualimu-{_pkg_version}",
        "master_seed": report.config.master_seed,
        "fold_seeds": report.fold_seeds,
        "config": asdict(report.config),
        "subjects": report.subjects,
        "mean_accuracy": report.mean_accuracy,
        "generated_feature_mse": report.generated_feature_mse,
        "naive_feature_mse": report.naive_feature_mse,
        "notes": {
            "scalers": "each condition standardizes with the scaler fitted on its own "
                       "training features; generated features are already standardized "
                       "because their training targets were",
        },
    }
    (out / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")
