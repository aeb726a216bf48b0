"""Decision tree (Gini, best-first, leaf cap) and k-nearest-neighbour classifiers."""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field

import numpy as np

from .events import N_CLUSTERS

TIE_TOL = 1e-9
FEATURE_CHUNK = 128


@dataclass
class _Split:
    gain: float
    feature: int
    threshold: float
    left: np.ndarray
    right: np.ndarray


def gini(counts: np.ndarray) -> float:
    n = counts.sum()
    if n == 0:
        return 0.0
    p = counts / n
    return float(1.0 - (p * p).sum())


def best_split(x: np.ndarray, y: np.ndarray, n_classes: int) -> _Split | None:
    """Largest size-weighted Gini decrease over midpoints of consecutive unique values.

    Near-equal gains (within TIE_TOL) go to the lowest feature, then the
    lowest threshold. Returns None when no candidate threshold exists.
    """
    m, d = x.shape
    if m < 2:
        return None
    parent = np.bincount(y, minlength=n_classes).astype(np.float64)
    parent_term = (parent * parent).sum() / m
    nl = np.arange(1, m, dtype=np.float64)[:, None]
    nr = m - nl

    best_gain, best_f, best_k, best_order = -np.inf, -1, -1, None
    for f0 in range(0, d, FEATURE_CHUNK):
        xc = x[:, f0:f0 + FEATURE_CHUNK]
        order = np.argsort(xc, axis=0, kind="stable")
        xs = np.take_along_axis(xc, order, axis=0)
        onehot = np.eye(n_classes)[y[order]]
        left = np.cumsum(onehot, axis=0)[:-1]
        right = parent[None, None, :] - left
        gain = (left * left).sum(-1) / nl + (right * right).sum(-1) / nr - parent_term
        gain = np.where(xs[1:] > xs[:-1], gain, -np.inf)
        # feature-major scan so ties resolve to lower feature, then lower threshold
        flat = gain.T.reshape(-1)
        top = flat.max()
        if top == -np.inf or top <= best_gain + TIE_TOL:
            continue
        pos = int(np.flatnonzero(flat >= top - TIE_TOL)[0])
        f_local, k = divmod(pos, m - 1)
        best_gain, best_f, best_k = float(flat[pos]), f0 + f_local, k
        best_order = order[:, f_local]

    if best_f < 0:
        return None
    column = x[best_order, best_f]
    threshold = 0.5 * (column[best_k] + column[best_k + 1])
    mask = x[:, best_f] < threshold
    return _Split(best_gain, best_f, float(threshold), np.flatnonzero(mask), np.flatnonzero(~mask))


@dataclass
class DecisionTree:
    """Array-backed binary tree; ``feature[i] < 0`` marks a leaf."""

    n_features: int
    feature: list[int] = field(default_factory=list)
    threshold: list[float] = field(default_factory=list)
    left: list[int] = field(default_factory=list)
    right: list[int] = field(default_factory=list)
    counts: list[np.ndarray] = field(default_factory=list)

    kind = "dt"

    def _add(self, counts: np.ndarray) -> int:
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.counts.append(counts)
        return len(self.feature) - 1

    @property
    def n_leaves(self) -> int:
        return sum(1 for f in self.feature if f < 0)

    def leaf_class(self, node: int) -> int:
        return int(np.argmax(self.counts[node]))

    def predict(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[1] != self.n_features:
            raise ValueError(f"tree expects {self.n_features} features, got {x.shape[1]}")
        feature = np.array(self.feature)
        threshold = np.array(self.threshold)
        left, right = np.array(self.left), np.array(self.right)
        node = np.zeros(len(x), dtype=np.int64)
        rows = np.arange(len(x))
        while True:
            inner = feature[node] >= 0
            if not inner.any():
                break
            r, nd = rows[inner], node[inner]
            go_left = x[r, feature[nd]] < threshold[nd]
            node[inner] = np.where(go_left, left[nd], right[nd])
        return np.array([self.leaf_class(n) for n in node], dtype=np.int64)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "n_features": self.n_features,
            "feature": self.feature,
            "threshold": self.threshold,
            "left": self.left,
            "right": self.right,
            "counts": [c.tolist() for c in self.counts],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DecisionTree":
        return cls(d["n_features"], list(d["feature"]), list(d["threshold"]), list(d["left"]), list(d["right"]),
                   [np.array(c) for c in d["counts"]])


def dt_train(features, labels, max_leaves: int = 500, n_classes: int = N_CLUSTERS) -> DecisionTree:
    """Grow a tree best-first: always split the frontier leaf with the largest Gini decrease."""
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if x.ndim == 1:
        x = x[:, None]
    if len(x) == 0:
        raise ValueError("cannot train a tree on no samples")
    if len(y) != len(x):
        raise ValueError("one label per row required")
    if max_leaves < 1:
        raise ValueError("max_leaves must be >= 1")
    if np.any(y < 0) or np.any(y >= n_classes):
        raise ValueError(f"labels must lie in [0, {n_classes})")

    tree = DecisionTree(x.shape[1])
    root = tree._add(np.bincount(y, minlength=n_classes))
    frontier: list = []
    counter = 0

    def push(node: int, idx: np.ndarray):
        nonlocal counter
        split = best_split(x[idx], y[idx], n_classes)
        if split is not None and split.gain > TIE_TOL:
            heapq.heappush(frontier, (-split.gain, counter, node, idx, split))
            counter += 1

    push(root, np.arange(len(x)))
    leaves = 1
    while frontier and leaves < max_leaves:
        _, _, node, idx, split = heapq.heappop(frontier)
        li, ri = idx[split.left], idx[split.right]
        ln = tree._add(np.bincount(y[li], minlength=n_classes))
        rn = tree._add(np.bincount(y[ri], minlength=n_classes))
        tree.feature[node], tree.threshold[node] = split.feature, split.threshold
        tree.left[node], tree.right[node] = ln, rn
        leaves += 1
        push(ln, li)
        push(rn, ri)
    return tree


def dt_predict(tree: DecisionTree, row) -> int:
    return int(tree.predict(np.asarray(row, dtype=np.float64).reshape(1, -1))[0])


@dataclass
class KnnModel:
    features: np.ndarray
    labels: np.ndarray
    k: int = 3

    kind = "knn"

    def __post_init__(self):
        self.features = np.atleast_2d(np.asarray(self.features, dtype=np.float64))
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.features) != len(self.labels):
            raise ValueError("one label per stored row required")
        if not 1 <= self.k <= len(self.features):
            raise ValueError(f"k={self.k} needs at least k stored rows, have {len(self.features)}")

    def neighbours(self, row: np.ndarray) -> np.ndarray:
        d2 = ((self.features - row[None, :]) ** 2).sum(axis=1)
        return np.argsort(d2, kind="stable")[: self.k]

    def predict(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[1] != self.features.shape[1]:
            raise ValueError(f"model stores rows of width {self.features.shape[1]}, got {x.shape[1]}")
        return np.array([self._vote(self.neighbours(r)) for r in x], dtype=np.int64)

    def _vote(self, nearest: np.ndarray) -> int:
        classes = self.labels[nearest]
        votes = np.bincount(classes)
        tied = np.flatnonzero(votes == votes.max())
        if len(tied) == 1:
            return int(tied[0])
        for c in classes:  # nearest first
            if c in tied:
                return int(c)
        raise AssertionError("unreachable")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "k": self.k, "features": self.features.tolist(), "labels": self.labels.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "KnnModel":
        return cls(np.array(d["features"]), np.array(d["labels"]), d["k"])


def knn_fit(features, labels, k: int = 3) -> KnnModel:
    return KnnModel(features, labels, k)


def knn_predict(model: KnnModel, row) -> int:
    return int(model.predict(np.asarray(row, dtype=np.float64).reshape(1, -1))[0])
