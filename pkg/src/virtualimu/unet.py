"""1D U-Net transformation model with hand-derived gradients.

The network maps a 4-channel acceleration window to either a full-length
signal (1x1 convolution head) or a single scalar (fully connected head).
Encoder blocks are conv(k=3, same) -> ReLU -> maxpool(2); decoder blocks are
nearest-upsample(2) -> concat skip -> conv -> ReLU. No autodiff framework is
used: the topology is fixed, so backpropagation is written out layer by
layer and verified against finite differences in the test suite.

Array convention: activations are (batch, channels, length); convolution
weights are (out_channels, in_channels, kernel); all math is float64.
"""

from __future__ import annotations

import hashlib
import json
import struct
import zlib
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import (
    CheckpointError,
    CheckpointVersionError,
    ConfigError,
    DivergenceError,
    ShapeError,
)
from .seeding import derive_seed
from .signals import CHANNEL_NAMES, Window, WindowSet

ADADELTA_RHO = 0.95
ADADELTA_EPS = 1e-6

SIGNAL_HEAD = "signal"
FEATURE_HEAD = "feature"

_CKPT_MAGIC = b"VIMU"
_CKPT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    input_channels: int = 4
    window_len: int = 64
    encoder_channels: tuple[int, ...] = (32, 64, 128)
    kernel_size: int = 3
    head: str = SIGNAL_HEAD
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "encoder_channels", tuple(int(c) for c in self.encoder_channels))
        levels = len(self.encoder_channels)
        if levels < 1:
            raise ConfigError("need at least one encoder level")
        if self.window_len % (2**levels) != 0:
            raise ConfigError(
                f"window_len {self.window_len} must be divisible by 2^{levels}"
            )
        if self.kernel_size % 2 != 1 or self.kernel_size < 1:
            raise ConfigError("kernel_size must be odd and positive")
        if self.head not in (SIGNAL_HEAD, FEATURE_HEAD):
            raise ConfigError(f"unknown head {self.head!r}")
        if self.input_channels < 1:
            raise ConfigError("input_channels must be >= 1")

    def to_json(self) -> str:
        return json.dumps(
            {
                "input_channels": self.input_channels,
                "window_len": self.window_len,
                "encoder_channels": list(self.encoder_channels),
                "kernel_size": self.kernel_size,
                "head": self.head,
                "seed": self.seed,
            },
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> "ModelConfig":
        doc = json.loads(text)
        return cls(
            input_channels=int(doc["input_channels"]),
            window_len=int(doc["window_len"]),
            encoder_channels=tuple(doc["encoder_channels"]),
            kernel_size=int(doc["kernel_size"]),
            head=str(doc["head"]),
            seed=int(doc["seed"]),
        )


def param_specs(cfg: ModelConfig) -> list[tuple[str, tuple[int, ...]]]:
    """Declared parameter order and shapes; also the checkpoint blob order."""
    specs = []
    chans = cfg.encoder_channels
    k = cfg.kernel_size
    prev = cfg.input_channels
    for i, c in enumerate(chans):
        specs.append((f"enc{i}_w", (c, prev, k)))
        specs.append((f"enc{i}_b", (c,)))
        prev = c
    # Decoder mirrors the encoder: at level i the upsampled features are
    # concatenated with skip a_i, so the conv input width is cur + chans[i].
    cur = chans[-1]
    for i in range(len(chans) - 1, -1, -1):
        out = chans[i - 1] if i >= 1 else chans[0]
        specs.append((f"dec{i}_w", (out, cur + chans[i], k)))
        specs.append((f"dec{i}_b", (out,)))
        cur = out
    if cfg.head == SIGNAL_HEAD:
        specs.append(("head_w", (1, cur, 1)))
        specs.append(("head_b", (1,)))
    else:
        specs.append(("head_w", (cur * cfg.window_len,)))
        specs.append(("head_b", (1,)))
    return specs


class TransformModel:
    """U-Net weights plus Adadelta accumulators."""

    def __init__(self, config: ModelConfig, params: dict[str, np.ndarray],
                 eg: dict[str, np.ndarray], ed: dict[str, np.ndarray]):
        self.config = config
        self.params = params
        self.eg = eg  # running E[g^2]
        self.ed = ed  # running E[delta^2]

    def copy_params(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.params.items()}

    def set_params(self, params: Mapping[str, np.ndarray]) -> None:
        for k in self.params:
            self.params[k] = np.array(params[k], dtype=float)


def build_model(cfg: ModelConfig) -> TransformModel:
    """Deterministic uniform fan-in initialization from cfg.seed."""
    rng = np.random.default_rng(cfg.seed)
    params, eg, ed = {}, {}, {}
    for name, shape in param_specs(cfg):
        if name.endswith("_b"):
            params[name] = np.zeros(shape)
        else:
            fan_in = int(np.prod(shape[1:])) if len(shape) > 1 else shape[0]
            bound = 1.0 / np.sqrt(fan_in)
            params[name] = rng.uniform(-bound, bound, size=shape)
        eg[name] = np.zeros(shape)
        ed[name] = np.zeros(shape)
    return TransformModel(cfg, params, eg, ed)


# --- primitive layers -------------------------------------------------------


def _conv1d(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    # x (B,C,L), w (O,C,K) with same-padding; returns output and the im2col
    # view needed by the backward pass.
    K = w.shape[2]
    p = (K - 1) // 2
    xp = np.pad(x, ((0, 0), (0, 0), (p, p))) if p else x
    cols = sliding_window_view(xp, K, axis=2)  # (B,C,L,K)
    out = np.tensordot(cols, w, axes=([1, 3], [1, 2]))  # (B,L,O)
    return out.transpose(0, 2, 1) + b[None, :, None], cols

def _conv1d_backward(dout: np.ndarray, cols: np.ndarray, w: np.ndarray):
    # dout (B,O,L). dx is the correlation of dout with the kernel flipped in
    # its tap axis and transposed in its channel axes.
    dw = np.tensordot(dout, cols, axes=([0, 2], [0, 2]))  # (O,C,K)
    db = dout.sum(axis=(0, 2))
    K = w.shape[2]
    p = (K - 1) // 2
    doutp = np.pad(dout, ((0, 0), (0, 0), (p, p))) if p else dout
    dcols = sliding_window_view(doutp, K, axis=2)  # (B,O,L,K)
    dx = np.tensordot(dcols, w[:, :, ::-1], axes=([1, 3], [0, 2]))  # (B,L,C)
    return dx.transpose(0, 2, 1), dw, db


def _maxpool2(x: np.ndarray):
    B, C, L = x.shape
    xr = x.reshape(B, C, L // 2, 2)
    idx = xr.argmax(axis=3)  # ties resolve to the first element
    out = np.take_along_axis(xr, idx[..., None], axis=3)[..., 0]
    return out, idx


def _maxpool2_backward(dout: np.ndarray, idx: np.ndarray) -> np.ndarray:
    B, C, Lh = dout.shape
    d = np.zeros((B, C, Lh, 2))
    np.put_along_axis(d, idx[..., None], dout[..., None], axis=3)
    return d.reshape(B, C, Lh * 2)


def _upsample2(x: np.ndarray) -> np.ndarray:
    return np.repeat(x, 2, axis=2)


def _upsample2_backward(dout: np.ndarray) -> np.ndarray:
    B, C, L = dout.shape
    return dout.reshape(B, C, L // 2, 2).sum(axis=3)


# --- forward / backward ------------------------------------------------------


def _check_input(cfg: ModelConfig, x: np.ndarray) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    single = x.ndim == 2
    if single:
        x = x[None]
    if x.ndim != 3 or x.shape[1] != cfg.input_channels or x.shape[2] != cfg.window_len:
        raise ShapeError(
            f"expected input (B,{cfg.input_channels},{cfg.window_len}), got {x.shape}"
        )
    return x, single


def _forward_cache(m: TransformModel, x: np.ndarray, ablate_skips: bool = False):
    cfg = m.config
    P = m.params
    cache = {"conv_cols": {}, "relu_mask": {}, "pool_idx": {}, "preact": {}}
    skips = []
    cur = x
    for i in range(len(cfg.encoder_channels)):
        z, cols = _conv1d(cur, P[f"enc{i}_w"], P[f"enc{i}_b"])
        cache["conv_cols"][f"enc{i}"] = cols
        cache["preact"][f"enc{i}"] = z
        mask = z > 0
        cache["relu_mask"][f"enc{i}"] = mask
        a = z * mask
        skips.append(a)
        cur, idx = _maxpool2(a)
        cache["pool_idx"][i] = idx
    for i in range(len(cfg.encoder_channels) - 1, -1, -1):
        up = _upsample2(cur)
        skip = np.zeros_like(skips[i]) if ablate_skips else skips[i]
        cat = np.concatenate([up, skip], axis=1)
        cache[f"split{i}"] = up.shape[1]
        z, cols = _conv1d(cat, P[f"dec{i}_w"], P[f"dec{i}_b"])
        cache["conv_cols"][f"dec{i}"] = cols
        cache["preact"][f"dec{i}"] = z
        mask = z > 0
        cache["relu_mask"][f"dec{i}"] = mask
        cur = z * mask
    cache["body_out"] = cur
    if cfg.head == SIGNAL_HEAD:
        out, cols = _conv1d(cur, P["head_w"], P["head_b"])
        cache["conv_cols"]["head"] = cols
    else:
        flat = cur.reshape(cur.shape[0], -1)
        cache["head_flat"] = flat
        out = flat @ P["head_w"] + P["head_b"][0]
    cache["ablate_skips"] = ablate_skips
    return out, cache


def forward(m: TransformModel, x: np.ndarray, ablate_skips: bool = False) -> np.ndarray:
    """Run the network. Signal head: (B,1,L) out; feature head: (B,) out.

    Unbatched (C,L) input returns (1,L) or a python float. ablate_skips
    zeroes the encoder activations fed to the skip paths (diagnostic only).
    """
    xb, single = _check_input(m.config, x)
    out, _ = _forward_cache(m, xb, ablate_skips=ablate_skips)
    if single:
        return out[0] if m.config.head == SIGNAL_HEAD else float(out[0])
    return out


def kink_margin(m: TransformModel, x: np.ndarray) -> float:
    """Distance of the forward pass from its nearest non-smooth point.

    Minimum over |pre-activation| at every ReLU and over the gap between
    competing max-pool pairs (where both competitors are active). Central
    finite differences are only a valid gradient oracle when this margin
    comfortably exceeds the probe step times the local sensitivity, so the
    gradient-check tests resample inputs until the margin is safe.
    """
    xb, _ = _check_input(m.config, x)
    _, cache = _forward_cache(m, xb)
    margin = np.inf
    for z in cache["preact"].values():
        margin = min(margin, float(np.min(np.abs(z))))
    for i in range(len(m.config.encoder_channels)):
        z = cache["preact"][f"enc{i}"]
        a = z * (z > 0)
        pairs = a.reshape(a.shape[0], a.shape[1], -1, 2)
        both_active = (pairs > 0).all(axis=3)
        gaps = np.abs(pairs[..., 0] - pairs[..., 1])[both_active]
        if gaps.size:
            margin = min(margin, float(np.min(gaps)))
    return margin


def loss_mae(pred: np.ndarray, target: np.ndarray) -> float:
    """Mean absolute error over all elements."""
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    if pred.shape != target.shape:
        raise ShapeError(f"pred {pred.shape} vs target {target.shape}")
    return float(np.mean(np.abs(pred - target)))


def _crop_bounds(full: int, part: int) -> tuple[int, int]:
    if part > full:
        raise ShapeError(f"target length {part} exceeds window length {full}")
    start = (full - part) // 2
    return start, start + part


def _loss_and_grads(m: TransformModel, x: np.ndarray, target: np.ndarray):
    """MAE loss and exact (sub)gradients for every parameter.

    Signal-head targets shorter than window_len are compared against the
    centre crop of the output; gradient outside the crop is zero.
    """
    cfg = m.config
    P = m.params
    xb, _ = _check_input(cfg, x)
    target = np.asarray(target, dtype=float)
    out, cache = _forward_cache(m, xb)

    if cfg.head == SIGNAL_HEAD:
        if target.ndim == 2:
            target = target[:, None, :]
        if target.ndim != 3 or target.shape[0] != xb.shape[0] or target.shape[1] != 1:
            raise ShapeError(f"signal target must be (B,1,Lt), got {target.shape}")
        lo, hi = _crop_bounds(out.shape[2], target.shape[2])
        pred = out[:, :, lo:hi]
        diff = pred - target
        loss = float(np.mean(np.abs(diff)))
        dout = np.zeros_like(out)
        dout[:, :, lo:hi] = np.sign(diff) / diff.size
    else:
        target = target.reshape(-1)
        if target.shape[0] != xb.shape[0]:
            raise ShapeError(f"feature target must be (B,), got {target.shape}")
        diff = out - target
        loss = float(np.mean(np.abs(diff)))
        dout = np.sign(diff) / diff.size

    grads = {}
    # head
    if cfg.head == SIGNAL_HEAD:
        dcur, grads["head_w"], grads["head_b"] = _conv1d_backward(
            dout, cache["conv_cols"]["head"], P["head_w"]
        )
    else:
        flat = cache["head_flat"]
        grads["head_w"] = dout @ flat
        grads["head_b"] = np.array([dout.sum()])
        dcur = (dout[:, None] * P["head_w"][None, :]).reshape(cache["body_out"].shape)

    # decoder, shallowest block first when walking back
    n_levels = len(cfg.encoder_channels)
    dskips = [None] * n_levels
    for i in range(n_levels):
        dz = dcur * cache["relu_mask"][f"dec{i}"]
        dcat, grads[f"dec{i}_w"], grads[f"dec{i}_b"] = _conv1d_backward(
            dz, cache["conv_cols"][f"dec{i}"], P[f"dec{i}_w"]
        )
        split = cache[f"split{i}"]
        dup, dskip = dcat[:, :split], dcat[:, split:]
        dskips[i] = dskip if not cache["ablate_skips"] else np.zeros_like(dskip)
        dcur = _upsample2_backward(dup)

    # encoder, deepest first; the pooled-path gradient arrives in dcur and the
    # skip-path gradient was collected above.
    for i in range(n_levels - 1, -1, -1):
        da = _maxpool2_backward(dcur, cache["pool_idx"][i]) + dskips[i]
        dz = da * cache["relu_mask"][f"enc{i}"]
        dcur, grads[f"enc{i}_w"], grads[f"enc{i}_b"] = _conv1d_backward(
            dz, cache["conv_cols"][f"enc{i}"], P[f"enc{i}_w"]
        )

    return loss, grads


def backward(m: TransformModel, x: np.ndarray, target: np.ndarray) -> dict[str, np.ndarray]:
    """Gradients of the MAE loss w.r.t. every parameter."""
    _, grads = _loss_and_grads(m, x, target)
    return grads


def adadelta_step(m: TransformModel, grads: Mapping[str, np.ndarray]) -> None:
    """One Adadelta update (rho=0.95, eps=1e-6, unit learning-rate multiplier)."""
    for name, p in m.params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ShapeError(f"gradient shape {g.shape} != param shape {p.shape} for {name}")
        eg = m.eg[name]
        ed = m.ed[name]
        eg *= ADADELTA_RHO
        eg += (1.0 - ADADELTA_RHO) * g * g
        delta = -np.sqrt(ed + ADADELTA_EPS) / np.sqrt(eg + ADADELTA_EPS) * g
        ed *= ADADELTA_RHO
        ed += (1.0 - ADADELTA_RHO) * delta * delta
        p += delta


# --- training ----------------------------------------------------------------


@dataclass
class TrainHistory:
    train_mae: list[float] = field(default_factory=list)
    val_mae: list[float] = field(default_factory=list)
    best_epoch: int = 0  # 1-based; 0 means "never evaluated"
    stopped_epoch: int = 0


def evaluate_mae(m: TransformModel, X: np.ndarray, Y: np.ndarray, batch_size: int = 256) -> float:
    """Forward-only MAE of the model on (X, Y), crop-aware for signal heads."""
    cfg = m.config
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    total = 0.0
    n = X.shape[0]
    for s in range(0, n, batch_size):
        xb = X[s : s + batch_size]
        yb = Y[s : s + batch_size]
        out = forward(m, xb)
        if cfg.head == SIGNAL_HEAD:
            if yb.ndim == 2:
                yb = yb[:, None, :]
            lo, hi = _crop_bounds(out.shape[2], yb.shape[2])
            total += float(np.abs(out[:, :, lo:hi] - yb).sum()) / yb[0].size
        else:
            total += float(np.abs(out - yb.reshape(-1)).sum())
    return total / n


def train(
    m: TransformModel,
    train_set: tuple[np.ndarray, np.ndarray],
    val_set: tuple[np.ndarray, np.ndarray] | None = None,
    max_epochs: int = 250,
    patience: int = 20,
    min_delta: float = 1e-4,
    batch_size: int = 32,
) -> TrainHistory:
    """Shuffled mini-batch training with early stopping on validation MAE.

    The model is updated in place; with a validation set the best-validation
    snapshot is restored at the end. Deterministic given the model seed.
    """
    X, Y = train_set
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    n = X.shape[0]
    if n == 0:
        raise ShapeError("empty training set")
    has_val = val_set is not None and len(val_set[0]) > 0

    rng = np.random.default_rng(derive_seed(m.config.seed, "shuffle"))
    history = TrainHistory()
    best_val = np.inf
    best_params = None
    stale = 0

    for epoch in range(1, max_epochs + 1):
        order = rng.permutation(n)
        total = 0.0
        for s in range(0, n, batch_size):
            idx = order[s : s + batch_size]
            loss, grads = _loss_and_grads(m, X[idx], Y[idx])
            if not np.isfinite(loss):
                raise DivergenceError(f"non-finite training loss at epoch {epoch}")
            adadelta_step(m, grads)
            total += loss * len(idx)
        history.train_mae.append(total / n)

        if has_val:
            val = evaluate_mae(m, val_set[0], val_set[1])
            if not np.isfinite(val):
                raise DivergenceError(f"non-finite validation loss at epoch {epoch}")
            history.val_mae.append(val)
            if val < best_val - min_delta:
                best_val = val
                best_params = m.copy_params()
                history.best_epoch = epoch
                stale = 0
            else:
                stale += 1
                if stale >= patience:
                    history.stopped_epoch = epoch
                    break
    else:
        history.stopped_epoch = max_epochs

    if has_val and best_params is not None:
        m.set_params(best_params)
    if not has_val:
        history.best_epoch = history.stopped_epoch
    return history


# --- window padding helpers ---------------------------------------------------


def pad_windows(samples: np.ndarray, window_len: int) -> np.ndarray:
    """Symmetric zero-pad (n,C,L) windows along time to window_len."""
    samples = np.asarray(samples, dtype=float)
    if samples.ndim == 2:
        samples = samples[None]
    L = samples.shape[2]
    if L > window_len:
        raise ShapeError(f"window length {L} exceeds model window {window_len}")
    left = (window_len - L) // 2
    right = window_len - L - left
    return np.pad(samples, ((0, 0), (0, 0), (left, right)))


def crop_to(pred: np.ndarray, length: int) -> np.ndarray:
    """Centre-crop (B,1,L) or (B,L) predictions back to `length` samples."""
    full = pred.shape[-1]
    lo, hi = _crop_bounds(full, length)
    return pred[..., lo:hi]


# --- generation ----------------------------------------------------------------


def generate_signals(models: Mapping[str, TransformModel], video_windows: WindowSet) -> WindowSet:
    """Map video-derived windows through the four per-channel signal models.

    Each model produces its one output channel; the tot channel is the tot
    model's output, not a recomputed norm.
    """
    missing = [c for c in CHANNEL_NAMES if c not in models]
    if missing:
        raise ConfigError(f"missing signal models for channels: {missing}")
    if not video_windows:
        return []
    L = video_windows[0].samples.shape[1]
    X = np.stack([w.samples for w in video_windows])
    out = np.empty((len(video_windows), 4, L))
    for ci, ch in enumerate(CHANNEL_NAMES):
        model = models[ch]
        if model.config.head != SIGNAL_HEAD:
            raise ConfigError(f"model for channel {ch!r} does not have a signal head")
        pred = forward(model, pad_windows(X, model.config.window_len))
        out[:, ci, :] = crop_to(pred, L)[:, 0, :]
    return [
        Window(start_time=w.start_time, samples=out[i], subject_id=w.subject_id,
               activity_label=w.activity_label)
        for i, w in enumerate(video_windows)
    ]


def generate_features(models: Mapping[str, TransformModel], video_windows: WindowSet):
    """Predict the 28 standardized statistics for each video-derived window."""
    from .features import FEATURE_NAMES, FeatureVector

    missing = [f for f in FEATURE_NAMES if f not in models]
    if missing:
        raise ConfigError(f"missing feature models: {missing}")
    if not video_windows:
        return []
    X = np.stack([w.samples for w in video_windows])
    values = np.empty((len(video_windows), len(FEATURE_NAMES)))
    for fi, name in enumerate(FEATURE_NAMES):
        model = models[name]
        if model.config.head != FEATURE_HEAD:
            raise ConfigError(f"model for feature {name!r} does not have a feature head")
        values[:, fi] = forward(model, pad_windows(X, model.config.window_len))
    return [
        FeatureVector(values=values[i], subject_id=w.subject_id,
                      activity_label=w.activity_label, standardized=True)
        for i, w in enumerate(video_windows)
    ]


# --- checkpointing --------------------------------------------------------------


def save_model(m: TransformModel, path) -> None:
    """Versioned binary checkpoint: magic, config block + hash, f64 parameter
    blobs in declared order (then optimizer accumulators), trailing CRC32."""
    cfg_blob = m.config.to_json().encode("utf-8")
    cfg_hash = hashlib.sha256(cfg_blob).digest()[:8]
    parts = [_CKPT_MAGIC, struct.pack("<HB", _CKPT_VERSION, 8),
             struct.pack("<I", len(cfg_blob)), cfg_blob, cfg_hash]
    for name, _ in param_specs(m.config):
        parts.append(m.params[name].astype("<f8").tobytes())
    for store in (m.eg, m.ed):
        for name, _ in param_specs(m.config):
            parts.append(store[name].astype("<f8").tobytes())
    body = b"".join(parts)
    with open(path, "wb") as fh:
        fh.write(body + struct.pack("<I", zlib.crc32(body)))


def load_model(path) -> TransformModel:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < len(_CKPT_MAGIC) + 7 + 4:
        raise CheckpointError(f"checkpoint {path} is truncated")
    body, (crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
    if zlib.crc32(body) != crc:
        raise CheckpointError(f"checkpoint {path} failed its checksum")
    if body[:4] != _CKPT_MAGIC:
        raise CheckpointError(f"{path} is not a model checkpoint")
    version, dtype_code = struct.unpack("<HB", body[4:7])
    if version != _CKPT_VERSION:
        raise CheckpointVersionError(f"unsupported checkpoint version {version}")
    if dtype_code not in (4, 8):
        raise CheckpointError(f"unknown parameter dtype code {dtype_code}")
    dtype = "<f8" if dtype_code == 8 else "<f4"
    (cfg_len,) = struct.unpack("<I", body[7:11])
    pos = 11
    cfg_blob = body[pos : pos + cfg_len]
    pos += cfg_len
    stored_hash = body[pos : pos + 8]
    pos += 8
    if hashlib.sha256(cfg_blob).digest()[:8] != stored_hash:
        raise CheckpointVersionError(f"config hash mismatch in {path}")
    cfg = ModelConfig.from_json(cfg_blob.decode("utf-8"))

    itemsize = 8 if dtype_code == 8 else 4
    stores = []
    for _ in range(3):  # params, eg, ed
        store = {}
        for name, shape in param_specs(cfg):
            count = int(np.prod(shape))
            nbytes = count * itemsize
            if pos + nbytes > len(body):
                raise CheckpointError(f"checkpoint {path} is truncated")
            store[name] = (
                np.frombuffer(body[pos : pos + nbytes], dtype=dtype)
                .astype(float)
                .reshape(shape)
                .copy()
            )
            pos += nbytes
        stores.append(store)
    if pos != len(body):
        raise CheckpointError(f"{len(body) - pos} unexpected trailing bytes in {path}")
    return TransformModel(cfg, *stores)
