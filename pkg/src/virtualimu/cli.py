"""Command-line entry point binding the pipeline into reproducible runs.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric divergence.
Progress goes to stderr; machine-readable results go to files only.

An optional key=value config file (--config) supplies defaults; explicit
flags override it. VIRTUALIMU_DATA sets the default data directory for
`evaluate`.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import DivergenceError, VirtualImuError
from .evaluate import ExperimentConfig, load_corpus, run_experiment, write_report
from .features import (
    FEATURE_NAMES,
    apply_scaler_matrix,
    feature_matrix,
    featurize_windows,
    fit_scaler,
    load_features_csv,
    save_features_csv,
    Scaler,
    FeatureVector,
)
from .forest import ForestConfig, save_forest, train_forest
from .pose import (
    calibrate_subject,
    estimate_center_track,
    fill_missing,
    load_center_track,
    parse_pose_sequence,
    save_center_track,
)
from .signals import (
    condition_imu,
    differentiate_twice,
    load_track,
    load_windows,
    lowpass,
    make_windows,
    save_windows,
    window_matrix,
)
from .unet import (
    FEATURE_HEAD,
    SIGNAL_HEAD,
    ModelConfig,
    build_model,
    generate_features,
    generate_signals,
    load_model,
    pad_windows,
    save_model,
    train,
)

DEFAULT_SEED = 7

SIGNAL_TARGETS = ("x", "y", "z", "tot")


class _Parser(argparse.ArgumentParser):
    # usage problems exit 1, not argparse's default 2
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


def _parse_channels(text: str) -> tuple[int, ...]:
    return tuple(int(c) for c in text.split(",") if c.strip())


def build_parser() -> _Parser:
    parser = _Parser(
        prog="virtualimu",
        description="Virtual IMU signals/features from 2D pose sequences.",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    parser.add_argument("--version", action="version", version=f"virtualimu {__version__}")
    parser.add_argument("--config", default=None, help="key=value config file; flags override it")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_text):
        p = sub.add_parser(name, help=help_text,
                           formatter_class=argparse.ArgumentDefaultsHelpFormatter)
        p.add_argument("--seed", type=int, default=DEFAULT_SEED, help="master random seed")
        return p

    p = add("synth", "generate a synthetic paired pose/IMU corpus")
    p.add_argument("--out", required=True, help="output corpus directory")
    p.add_argument("--subjects", type=int, default=4, help="number of subjects")
    p.add_argument("--duration", type=float, default=40.0, help="seconds per take")
    p.add_argument("--pose-jitter", type=float, default=0.10, help="pose jitter stddev, px")
    p.add_argument("--imu-noise", type=float, default=0.08, help="IMU noise stddev, m/s^2")

    p = add("extract", "pose keypoint file -> metric body-center track CSV")
    p.add_argument("--poses", required=True, help="keypoint JSON file")
    p.add_argument("--calibration", required=True, help="standing-sweep keypoint JSON file")
    p.add_argument("--z-near", type=float, default=2.0, help="near standing distance, m")
    p.add_argument("--z-far", type=float, default=5.0, help="far standing distance, m")
    p.add_argument("--subject-height", type=float, default=1.75, help="assumed height, m")
    p.add_argument("--out", required=True, help="output center-track CSV")

    p = add("accel", "track -> windowed acceleration records")
    p.add_argument("--kind", choices=("video", "imu"), default="video",
                   help="video: center-track CSV; imu: raw accelerometer CSV")
    p.add_argument("--track", required=True, help="input track CSV")
    p.add_argument("--cutoff", type=float, default=12.0, help="low-pass cutoff, Hz")
    p.add_argument("--out", required=True, help="output windows binary")

    p = add("featurize", "windows binary -> 28-column feature CSV")
    p.add_argument("--windows", required=True, help="input windows binary")
    p.add_argument("--out", required=True, help="output feature CSV")

    p = add("train-gen", "train one transformation model (signal or feature head)")
    p.add_argument("--head", choices=(SIGNAL_HEAD, FEATURE_HEAD), required=True)
    p.add_argument("--target", required=True,
                   help=f"signal channel {SIGNAL_TARGETS} or feature name (e.g. tot_med)")
    p.add_argument("--video-windows", required=True, help="input windows binary")
    p.add_argument("--imu-windows", required=True, help="target windows binary")
    p.add_argument("--epochs", type=int, default=250, help="max training epochs")
    p.add_argument("--patience", type=int, default=20, help="early-stopping patience")
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--channels", default="32,64,128", help="encoder channel widths")
    p.add_argument("--window-len", type=int, default=64, help="padded model window length")
    p.add_argument("--val-fraction", type=float, default=0.0,
                   help="tail fraction of pairs held out for early stopping")
    p.add_argument("--out", required=True, help="output checkpoint path")

    p = add("generate", "apply trained models to video-derived windows")
    p.add_argument("--head", choices=(SIGNAL_HEAD, FEATURE_HEAD), required=True)
    p.add_argument("--models", required=True,
                   help="directory of <target>.ckpt checkpoints")
    p.add_argument("--video-windows", required=True, help="input windows binary")
    p.add_argument("--out", required=True, help="windows binary (signal) or feature CSV (feature)")

    p = add("train-har", "train the random-forest activity classifier")
    p.add_argument("--features", required=True, help="feature CSV")
    p.add_argument("--standardized", action="store_true",
                   help="input features are already standardized")
    p.add_argument("--trees", type=int, default=100)
    p.add_argument("--max-features", type=int, default=6)
    p.add_argument("--out", required=True, help="output forest file")

    p = add("evaluate", "full LOSO three-classifier experiment on a corpus")
    p.add_argument("--data", default=os.environ.get("VIRTUALIMU_DATA"),
                   help="corpus directory (default: $VIRTUALIMU_DATA)")
    p.add_argument("--out", required=True, help="output report directory")
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1,
                   help="parallel model-training tasks")
    p.add_argument("--epochs", type=int, default=120, help="max epochs per model")
    p.add_argument("--patience", type=int, default=12)
    p.add_argument("--channels", default="8,16", help="encoder channel widths")
    p.add_argument("--trees", type=int, default=100)
    p.add_argument("--no-signal-models", action="store_true",
                   help="skip the four signal-head models (accuracy tables only)")
    return parser


def _apply_config_file(parser: _Parser, argv: list[str]) -> list[str]:
    """Fold --config file values in as defaults; explicit flags still win."""
    if "--config" not in argv:
        return argv
    i = argv.index("--config")
    if i + 1 >= len(argv):
        parser.error("--config requires a path")
    path = Path(argv[i + 1])
    if not path.exists():
        raise VirtualImuError(f"config file not found: {path}")
    extra: list[str] = []
    for line_no, line in enumerate(path.read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise VirtualImuError(f"{path}:{line_no}: expected key=value, got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        extra.extend([f"--{key.replace('_', '-')}", value])
    # file-provided flags go first so command-line flags override them
    rest = argv[:i] + argv[i + 2 :]
    if not rest:
        return extra
    return [rest[0], *extra, *rest[1:]]


# --- subcommand bodies ---------------------------------------------------------


def _cmd_synth(args) -> int:
    from .synth import SyntheticConfig, generate_corpus

    cfg = SyntheticConfig(
        n_subjects=args.subjects,
        duration=args.duration,
        pose_jitter_px=args.pose_jitter,
        imu_noise_ms2=args.imu_noise,
        seed=args.seed,
    )
    manifest = generate_corpus(cfg, args.out)
    _log(f"wrote corpus with {len(manifest['files'])} takes to {args.out}")
    return 0


def _cmd_extract(args) -> int:
    seq = fill_missing(parse_pose_sequence(_read_bytes(args.poses)))
    cal_seq = fill_missing(parse_pose_sequence(_read_bytes(args.calibration)))
    cal = calibrate_subject(cal_seq.frames, args.z_near, args.z_far,
                            subject_height=args.subject_height)
    track = estimate_center_track(seq, cal)
    save_center_track(track, args.out)
    _log(f"wrote {len(track)}-sample center track to {args.out}")
    return 0


def _cmd_accel(args) -> int:
    if args.kind == "video":
        track = differentiate_twice(load_center_track(_require(args.track)))
        track = lowpass(track, args.cutoff)
    else:
        track = condition_imu(load_track(_require(args.track)), cutoff=args.cutoff)
    windows = make_windows(track)
    save_windows(windows, args.out)
    _log(f"wrote {len(windows)} windows to {args.out}")
    return 0


def _cmd_featurize(args) -> int:
    windows = load_windows(_require(args.windows))
    save_features_csv(featurize_windows(windows), args.out)
    _log(f"wrote {len(windows)} feature rows to {args.out}")
    return 0


def _cmd_train_gen(args) -> int:
    video = load_windows(_require(args.video_windows))
    imu = load_windows(_require(args.imu_windows))
    if len(video) != len(imu):
        raise VirtualImuError(
            f"window counts differ: {len(video)} video vs {len(imu)} imu"
        )
    cfg = ModelConfig(
        window_len=args.window_len,
        encoder_channels=_parse_channels(args.channels),
        head=args.head,
        seed=args.seed,
    )
    X = pad_windows(window_matrix(video), cfg.window_len)

    scaler = None
    if args.head == SIGNAL_HEAD:
        if args.target not in SIGNAL_TARGETS:
            raise VirtualImuError(f"signal target must be one of {SIGNAL_TARGETS}")
        ci = SIGNAL_TARGETS.index(args.target)
        Y = window_matrix(imu)[:, ci, :]
    else:
        if args.target not in FEATURE_NAMES:
            raise VirtualImuError(f"feature target must be one of {FEATURE_NAMES}")
        fi = FEATURE_NAMES.index(args.target)
        feats = featurize_windows(imu)
        scaler = fit_scaler(feats)
        Y = apply_scaler_matrix(scaler, feature_matrix(feats))[:, fi]

    n_val = int(round(args.val_fraction * len(X)))
    if n_val > 0:
        fit_set = (X[:-n_val], Y[:-n_val])
        val_set = (X[-n_val:], Y[-n_val:])
    else:
        fit_set, val_set = (X, Y), None

    model = build_model(cfg)
    history = train(model, fit_set, val_set, max_epochs=args.epochs,
                    patience=args.patience, batch_size=args.batch_size)
    save_model(model, args.out)
    if scaler is not None:
        with open(str(args.out) + ".scaler.json", "w", encoding="utf-8") as fh:
            json.dump({"mean": scaler.mean.tolist(), "std": scaler.std.tolist(),
                       "target": args.target}, fh, sort_keys=True)
    _log(
        f"trained {args.head}/{args.target}: {len(history.train_mae)} epochs, "
        f"final MAE {history.train_mae[-1]:.4f}; checkpoint at {args.out}"
    )
    return 0


def _cmd_generate(args) -> int:
    video = load_windows(_require(args.video_windows))
    model_dir = Path(_require(args.models))
    names = SIGNAL_TARGETS if args.head == SIGNAL_HEAD else FEATURE_NAMES
    models = {}
    for name in names:
        path = model_dir / f"{name}.ckpt"
        if not path.exists():
            raise VirtualImuError(f"missing checkpoint {path}")
        models[name] = load_model(path)
    if args.head == SIGNAL_HEAD:
        save_windows(generate_signals(models, video), args.out)
    else:
        save_features_csv(generate_features(models, video), args.out)
    _log(f"generated {args.head} output for {len(video)} windows -> {args.out}")
    return 0


def _cmd_train_har(args) -> int:
    vectors = load_features_csv(_require(args.features), standardized=args.standardized)
    if not args.standardized:
        scaler = fit_scaler(vectors)
        X = apply_scaler_matrix(scaler, feature_matrix(vectors))
        with open(str(args.out) + ".scaler.json", "w", encoding="utf-8") as fh:
            json.dump({"mean": scaler.mean.tolist(), "std": scaler.std.tolist()},
                      fh, sort_keys=True)
    else:
        X = feature_matrix(vectors)
    y = [v.activity_label for v in vectors]
    forest = train_forest(
        X, y, ForestConfig(n_trees=args.trees, max_features=args.max_features, seed=args.seed)
    )
    save_forest(forest, args.out)
    _log(f"trained forest of {args.trees} trees on {len(X)} samples -> {args.out}")
    return 0


def _cmd_evaluate(args) -> int:
    if not args.data:
        raise VirtualImuError("no corpus: pass --data or set VIRTUALIMU_DATA")
    data = load_corpus(_require(args.data))
    cfg = ExperimentConfig(
        master_seed=args.seed,
        encoder_channels=_parse_channels(args.channels),
        max_epochs=args.epochs,
        patience=args.patience,
        n_trees=args.trees,
        threads=args.threads,
        train_signal_models=not args.no_signal_models,
    )
    report = run_experiment(data, cfg)
    write_report(report, args.out)
    means = ", ".join(f"{c}={report.mean_accuracy[c]:.3f}" for c in ("imu", "generated", "video"))
    _log(f"mean LOSO accuracy: {means}")
    _log(f"report written to {args.out}")
    return 0


def _require(path) -> str:
    if not Path(path).exists():
        raise VirtualImuError(f"input path does not exist: {path}")
    return path


def _read_bytes(path) -> bytes:
    return Path(_require(path)).read_bytes()


_COMMANDS = {
    "synth": _cmd_synth,
    "extract": _cmd_extract,
    "accel": _cmd_accel,
    "featurize": _cmd_featurize,
    "train-gen": _cmd_train_gen,
    "generate": _cmd_generate,
    "train-har": _cmd_train_har,
    "evaluate": _cmd_evaluate,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        argv = _apply_config_file(parser, argv)
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except DivergenceError as exc:
        _log(f"error: {exc}")
        return 3
    except VirtualImuError as exc:
        _log(f"error: {exc}")
        return 2
    except OSError as exc:
        _log(f"error: {exc}")
        return 2


def entry() -> None:
    sys.exit(main())
