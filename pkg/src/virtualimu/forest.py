"""Random-forest activity classifier over the 28-feature vectors.

Written from scratch so the contracts are exact: bootstrap indices depend
only on (seed, tree index), split candidates are midpoints between
consecutive sorted unique values, impurity is Gini, and every tie (feature,
threshold, class vote) resolves to the lowest index. Samples with
feature <= threshold go left.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass

import numpy as np

from .errors import CheckpointError, ParameterError, StateError
from .features import FeatureVector, N_FEATURES, feature_matrix
from .pose import ACTIVITIES
from .seeding import derive_seed

N_CLASSES = len(ACTIVITIES)

_FOREST_MAGIC = b"VIMF"
_FOREST_VERSION = 1


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 100
    max_features: int = 6  # ceil(sqrt(28))
    max_depth: int | None = None
    min_leaf: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise ParameterError("n_trees must be >= 1")
        if not (1 <= self.max_features <= N_FEATURES):
            raise ParameterError(f"max_features must be in [1, {N_FEATURES}]")
        if self.min_leaf < 1:
            raise ParameterError("min_leaf must be >= 1")


@dataclass
class DecisionTree:
    """Flat node arrays; feature == -1 marks a leaf."""

    feature: np.ndarray  # (n_nodes,) int
    threshold: np.ndarray  # (n_nodes,) float
    left: np.ndarray  # (n_nodes,) int, -1 for leaves
    right: np.ndarray
    histogram: np.ndarray  # (n_nodes, N_CLASSES) class counts

    def n_nodes(self) -> int:
        return len(self.feature)


@dataclass
class Forest:
    trees: list[DecisionTree]
    config: ForestConfig


def _as_matrix(X) -> np.ndarray:
    if isinstance(X, np.ndarray):
        M = np.asarray(X, dtype=float)
    else:
        vectors = list(X)
        if vectors and isinstance(vectors[0], FeatureVector):
            if not all(v.standardized for v in vectors):
                raise StateError("classifier inputs must be standardized feature vectors")
            M = feature_matrix(vectors)
        else:
            M = np.asarray(vectors, dtype=float)
    if M.ndim == 1:
        M = M[None, :]
    if M.shape[1] != N_FEATURES:
        raise ParameterError(f"expected {N_FEATURES} features, got {M.shape[1]}")
    return M


def _as_labels(y) -> np.ndarray:
    labels = []
    for item in y:
        if isinstance(item, str):
            if item not in ACTIVITIES:
                raise ParameterError(f"unknown activity label {item!r}")
            labels.append(ACTIVITIES.index(item))
        else:
            code = int(item)
            if not (0 <= code < N_CLASSES):
                raise ParameterError(f"label {code} outside the {N_CLASSES}-class range")
            labels.append(code)
    return np.array(labels, dtype=np.int64)


def _best_split(values: np.ndarray, labels: np.ndarray, min_leaf: int):
    """Best (gini, threshold) for one feature, or None if unsplittable.

    Candidates are midpoints between consecutive sorted unique values; ties
    on impurity pick the lowest threshold (impurity depends on counts only,
    which is what makes the partition invariant under monotone transforms).
    """
    order = np.argsort(values, kind="stable")
    v = values[order]
    lab = labels[order]
    m = len(v)
    boundary = np.flatnonzero(v[1:] != v[:-1])  # split after sorted position i
    if min_leaf > 1:
        boundary = boundary[(boundary + 1 >= min_leaf) & (m - boundary - 1 >= min_leaf)]
    if len(boundary) == 0:
        return None

    onehot = np.zeros((m, N_CLASSES))
    onehot[np.arange(m), lab] = 1.0
    cum = np.cumsum(onehot, axis=0)
    total = cum[-1]

    nl = (boundary + 1).astype(float)
    nr = m - nl
    left = cum[boundary]
    right = total[None, :] - left
    gini_l = 1.0 - ((left / nl[:, None]) ** 2).sum(axis=1)
    gini_r = 1.0 - ((right / nr[:, None]) ** 2).sum(axis=1)
    weighted = (nl * gini_l + nr * gini_r) / m

    k = int(np.argmin(weighted))  # first minimum -> lowest threshold
    i = boundary[k]
    return float(weighted[k]), 0.5 * (v[i] + v[i + 1])


def _grow_tree(X: np.ndarray, y: np.ndarray, cfg: ForestConfig, rng: np.random.Generator) -> DecisionTree:
    feature, threshold, left, right, hist = [], [], [], [], []

    def new_node() -> int:
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        hist.append(np.zeros(N_CLASSES, dtype=np.int64))
        return len(feature) - 1

    root = new_node()
    # Explicit stack, left child first, so the rng consumption order is a
    # deterministic function of the tree structure alone.
    stack = [(root, np.arange(len(y)), 0)]
    while stack:
        node, idx, depth = stack.pop()
        counts = np.bincount(y[idx], minlength=N_CLASSES)
        hist[node] = counts

        pure = counts.max() == len(idx)
        deep = cfg.max_depth is not None and depth >= cfg.max_depth
        small = len(idx) < 2 * cfg.min_leaf
        if pure or deep or small:
            continue

        chosen = np.sort(rng.choice(N_FEATURES, size=cfg.max_features, replace=False))
        best = None  # (gini, feature, threshold)
        for f in chosen:
            split = _best_split(X[idx, f], y[idx], cfg.min_leaf)
            if split is None:
                continue
            gini, thr = split
            if best is None or gini < best[0]:  # strict: ties keep lowest feature
                best = (gini, int(f), thr)
        if best is None:
            continue

        _, f, thr = best
        go_left = X[idx, f] <= thr
        lnode, rnode = new_node(), new_node()
        feature[node] = f
        threshold[node] = thr
        left[node] = lnode
        right[node] = rnode
        # push right first so the left child is processed (and draws rng) first
        stack.append((rnode, idx[~go_left], depth + 1))
        stack.append((lnode, idx[go_left], depth + 1))

    return DecisionTree(
        feature=np.array(feature, dtype=np.int64),
        threshold=np.array(threshold, dtype=float),
        left=np.array(left, dtype=np.int64),
        right=np.array(right, dtype=np.int64),
        histogram=np.stack(hist),
    )


def bootstrap_indices(seed: int, tree_index: int, n: int) -> np.ndarray:
    """The bootstrap sample multiset is a function of (seed, tree index) only."""
    rng = np.random.default_rng(derive_seed(seed, "bootstrap", tree_index))
    return rng.integers(0, n, size=n)


def train_forest(X, y, cfg: ForestConfig = ForestConfig()) -> Forest:
    """Train n_trees Gini trees on bootstrap samples of (X, y)."""
    M = _as_matrix(X)
    labels = _as_labels(y)
    if len(M) != len(labels):
        raise ParameterError(f"{len(M)} samples vs {len(labels)} labels")
    if len(M) == 0:
        raise ParameterError("empty training set")
    trees = []
    for t in range(cfg.n_trees):
        idx = bootstrap_indices(cfg.seed, t, len(M))
        rng = np.random.default_rng(derive_seed(cfg.seed, "grow", t))
        trees.append(_grow_tree(M[idx], labels[idx], cfg, rng))
    return Forest(trees=trees, config=cfg)


def _tree_votes(tree: DecisionTree, M: np.ndarray) -> np.ndarray:
    node = np.zeros(len(M), dtype=np.int64)
    while True:
        f = tree.feature[node]
        internal = f >= 0
        if not internal.any():
            break
        rows = np.flatnonzero(internal)
        vals = M[rows, f[rows]]
        thr = tree.threshold[node[rows]]
        node[rows] = np.where(vals <= thr, tree.left[node[rows]], tree.right[node[rows]])
    return np.argmax(tree.histogram[node], axis=1)  # argmax ties -> lowest class


def predict_matrix(forest: Forest, M: np.ndarray) -> np.ndarray:
    votes = np.stack([_tree_votes(tree, M) for tree in forest.trees])  # (T, n)
    tallies = np.apply_along_axis(np.bincount, 0, votes, minlength=N_CLASSES)  # (C, n)
    return np.argmax(tallies, axis=0)


def predict(forest: Forest, v) -> str:
    """Plurality vote over trees; ties resolve to the lowest class index."""
    if isinstance(v, FeatureVector) and not v.standardized:
        raise StateError("predict requires a standardized feature vector")
    M = _as_matrix([v] if isinstance(v, FeatureVector) else v)
    return ACTIVITIES[int(predict_matrix(forest, M)[0])]


def accuracy(forest: Forest, X, y) -> float:
    M = _as_matrix(X)
    labels = _as_labels(y)
    if len(M) != len(labels):
        raise ParameterError("sample/label count mismatch")
    if len(M) == 0:
        raise ParameterError("cannot score an empty set")
    pred = predict_matrix(forest, M)
    return float(np.mean(pred == labels))


# --- serialization -----------------------------------------------------------


def save_forest(forest: Forest, path) -> None:
    header = json.dumps(
        {
            "n_trees": forest.config.n_trees,
            "max_features": forest.config.max_features,
            "max_depth": forest.config.max_depth,
            "min_leaf": forest.config.min_leaf,
            "seed": forest.config.seed,
        },
        sort_keys=True,
    ).encode("utf-8")
    parts = [_FOREST_MAGIC, struct.pack("<HI", _FOREST_VERSION, len(header)), header]
    for tree in forest.trees:
        n = tree.n_nodes()
        parts.append(struct.pack("<I", n))
        parts.append(tree.feature.astype("<i8").tobytes())
        parts.append(tree.threshold.astype("<f8").tobytes())
        parts.append(tree.left.astype("<i8").tobytes())
        parts.append(tree.right.astype("<i8").tobytes())
        parts.append(tree.histogram.astype("<i8").tobytes())
    body = b"".join(parts)
    with open(path, "wb") as fh:
        fh.write(body + struct.pack("<I", zlib.crc32(body)))


def load_forest(path) -> Forest:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 14:
        raise CheckpointError(f"forest file {path} is truncated")
    body, (crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
    if zlib.crc32(body) != crc:
        raise CheckpointError(f"forest file {path} failed its checksum")
    if body[:4] != _FOREST_MAGIC:
        raise CheckpointError(f"{path} is not a forest file")
    version, hlen = struct.unpack("<HI", body[4:10])
    if version != _FOREST_VERSION:
        raise CheckpointError(f"unsupported forest version {version}")
    doc = json.loads(body[10 : 10 + hlen].decode("utf-8"))
    cfg = ForestConfig(
        n_trees=doc["n_trees"],
        max_features=doc["max_features"],
        max_depth=doc["max_depth"],
        min_leaf=doc["min_leaf"],
        seed=doc["seed"],
    )
    pos = 10 + hlen
    trees = []

    def take(nbytes):
        nonlocal pos
        if pos + nbytes > len(body):
            raise CheckpointError(f"forest file {path} is truncated")
        chunk = body[pos : pos + nbytes]
        pos += nbytes
        return chunk

    for _ in range(cfg.n_trees):
        (n,) = struct.unpack("<I", take(4))
        feature = np.frombuffer(take(8 * n), dtype="<i8").copy()
        threshold = np.frombuffer(take(8 * n), dtype="<f8").copy()
        left = np.frombuffer(take(8 * n), dtype="<i8").copy()
        right = np.frombuffer(take(8 * n), dtype="<i8").copy()
        histogram = np.frombuffer(take(8 * n * N_CLASSES), dtype="<i8").reshape(n, N_CLASSES).copy()
        trees.append(DecisionTree(feature, threshold, left, right, histogram))
    if pos != len(body):
        raise CheckpointError(f"unexpected trailing bytes in {path}")
    return Forest(trees=trees, config=cfg)


def dump_text(forest: Forest) -> str:
    """One node per line, for diffing forests."""
    lines = []
    for t, tree in enumerate(forest.trees):
        for i in range(tree.n_nodes()):
            if tree.feature[i] >= 0:
                lines.append(
                    f"tree {t} node {i}: feature={tree.feature[i]} "
                    f"threshold={tree.threshold[i]!r} left={tree.left[i]} right={tree.right[i]}"
                )
            else:
                counts = ",".join(str(int(c)) for c in tree.histogram[i])
                lines.append(f"tree {t} node {i}: leaf counts=[{counts}]")
    return "\n".join(lines) + "\n"
