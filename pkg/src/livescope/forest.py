"""Random forest of CART trees (Gini impurity), stored as flat arrays.

Small and dependency-free on purpose: the models here have one to three
input features and a few thousand samples, and keeping the trees as numpy
arrays makes them trivial to serialize exactly.

Class labels are sorted at fit time; on a vote tie the class that sorts
first wins, both inside a leaf and across trees.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["DecisionTree", "NotFittedError", "RandomForest", "cross_val_accuracy", "kfold_indices"]


class NotFittedError(RuntimeError):
    """Raised when predicting with a model that has not been trained."""


@dataclass
class DecisionTree:
    feature: np.ndarray  # -1 for leaves
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray  # predicted class index per node

    def apply(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(len(X), dtype=np.int64)
        rows = np.arange(len(X))
        while True:
            f = self.feature[node]
            inner = f >= 0
            if not inner.any():
                return node
            go_left = X[rows[inner], f[inner]] <= self.threshold[node[inner]]
            node[inner] = np.where(go_left, self.left[node[inner]], self.right[node[inner]])

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(X)]

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in ("feature", "threshold", "left", "right", "value")}

    @classmethod
    def from_dict(cls, d: dict) -> "DecisionTree":
        return cls(
            feature=np.asarray(d["feature"], dtype=np.int64),
            threshold=np.asarray(d["threshold"], dtype=np.float64),
            left=np.asarray(d["left"], dtype=np.int64),
            right=np.asarray(d["right"], dtype=np.int64),
            value=np.asarray(d["value"], dtype=np.int64),
        )


def _best_split(x: np.ndarray, y: np.ndarray, n_classes: int) -> tuple[float, float]:
    """Lowest weighted Gini over midpoints of one feature: (score, threshold)."""
    order = np.argsort(x, kind="stable")
    xs, ys = x[order], y[order]
    n = len(xs)
    onehot = np.zeros((n, n_classes))
    onehot[np.arange(n), ys] = 1.0
    left = np.cumsum(onehot, axis=0)[:-1]
    right = left[-1] + onehot[-1] - left
    nl = np.arange(1, n, dtype=np.float64)
    nr = n - nl
    gini_l = 1.0 - np.sum(left**2, axis=1) / nl**2
    gini_r = 1.0 - np.sum(right**2, axis=1) / nr**2
    score = (nl * gini_l + nr * gini_r) / n
    valid = xs[1:] > xs[:-1]
    if not valid.any():
        return np.inf, 0.0
    score = np.where(valid, score, np.inf)
    k = int(np.argmin(score))
    return float(score[k]), float((xs[k] + xs[k + 1]) / 2.0)


def _grow(X: np.ndarray, y: np.ndarray, n_classes: int, max_depth: int, max_features: int,
          min_samples_split: int, rng: np.random.Generator) -> DecisionTree:
    feature, threshold, left, right, value = [], [], [], [], []

    def new_node() -> int:
        for arr, v in ((feature, -1), (threshold, 0.0), (left, -1), (right, -1), (value, 0)):
            arr.append(v)
        return len(feature) - 1

    stack = [(new_node(), np.arange(len(y)), 0)]
    n_features = X.shape[1]
    while stack:
        node, idx, depth = stack.pop()
        counts = np.bincount(y[idx], minlength=n_classes)
        value[node] = int(np.argmax(counts))
        if depth >= max_depth or len(idx) < min_samples_split or counts.max() == len(idx):
            continue
        parent = 1.0 - np.sum((counts / len(idx)) ** 2)
        best = (np.inf, -1, 0.0)
        tried = 0
        for f in rng.permutation(n_features):
            score, thr = _best_split(X[idx, f], y[idx], n_classes)
            if np.isfinite(score):
                tried += 1
                if score < best[0]:
                    best = (score, int(f), thr)
            if tried >= max_features:
                break
        score, f, thr = best
        if f < 0 or score >= parent - 1e-12:
            continue
        mask = X[idx, f] <= thr
        li, ri = new_node(), new_node()
        feature[node], threshold[node], left[node], right[node] = f, thr, li, ri
        stack.append((ri, idx[~mask], depth + 1))
        stack.append((li, idx[mask], depth + 1))
    return DecisionTree(
        np.asarray(feature, dtype=np.int64),
        np.asarray(threshold, dtype=np.float64),
        np.asarray(left, dtype=np.int64),
        np.asarray(right, dtype=np.int64),
        np.asarray(value, dtype=np.int64),
    )


class RandomForest:
    """Bootstrap-aggregated CART classifier with majority voting."""

    def __init__(self, n_trees: int = 100, max_depth: int = 8, max_features: int | str = "sqrt",
                 bootstrap: bool = True, min_samples_split: int = 2, seed: int = 0):
        if n_trees < 1:
            raise ValueError("n_trees must be at least 1")
        self.n_trees = n_trees
        self.max_depth = max_depth
        self.max_features = max_features
        self.bootstrap = bootstrap
        self.min_samples_split = min_samples_split
        self.seed = seed
        self.trees: list[DecisionTree] = []
        self.classes_: np.ndarray | None = None

    @property
    def fitted(self) -> bool:
        return bool(self.trees)

    def _n_features_per_split(self, n_features: int) -> int:
        mf = self.max_features
        if mf == "sqrt":
            return max(1, int(np.sqrt(n_features)))
        if mf is None or mf == "all":
            return n_features
        return max(1, min(int(mf), n_features))

    def fit(self, X, y) -> "RandomForest":
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[:, None]
        y = np.asarray(y)
        self.classes_, yi = np.unique(y, return_inverse=True)
        if len(self.classes_) < 2:
            raise ValueError("training data must contain at least two classes")
        rng = np.random.default_rng(self.seed)
        k = len(self.classes_)
        mf = self._n_features_per_split(X.shape[1])
        self.trees = []
        for _ in range(self.n_trees):
            idx = rng.integers(0, len(yi), len(yi)) if self.bootstrap else np.arange(len(yi))
            self.trees.append(_grow(X[idx], yi[idx], k, self.max_depth, mf, self.min_samples_split, rng))
        return self

    def votes(self, X) -> np.ndarray:
        """Per-class vote counts, shape (n_samples, n_classes); rows sum to n_trees."""
        if not self.fitted:
            raise NotFittedError("forest has not been trained")
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[:, None]
        out = np.zeros((len(X), len(self.classes_)), dtype=np.int64)
        rows = np.arange(len(X))
        for tree in self.trees:
            np.add.at(out, (rows, tree.predict(X)), 1)
        return out

    def predict_proba(self, X) -> np.ndarray:
        return self.votes(X) / len(self.trees)

    def predict(self, X) -> np.ndarray:
        return self.classes_[np.argmax(self.votes(X), axis=1)]

    def to_dict(self) -> dict:
        if not self.fitted:
            raise NotFittedError("forest has not been trained")
        return {
            "n_trees": self.n_trees,
            "max_depth": self.max_depth,
            "max_features": self.max_features,
            "bootstrap": self.bootstrap,
            "min_samples_split": self.min_samples_split,
            "seed": self.seed,
            "classes": self.classes_.tolist(),
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RandomForest":
        rf = cls(d["n_trees"], d["max_depth"], d["max_features"], d["bootstrap"], d["min_samples_split"], d["seed"])
        rf.classes_ = np.asarray(d["classes"])
        rf.trees = [DecisionTree.from_dict(t) for t in d["trees"]]
        return rf


def kfold_indices(n: int, k: int = 5, seed: int = 0) -> list[tuple[np.ndarray, np.ndarray]]:
    """Shuffled k-fold (train, test) index pairs."""
    perm = np.random.default_rng(seed).permutation(n)
    folds = np.array_split(perm, k)
    return [(np.concatenate(folds[:i] + folds[i + 1 :]), folds[i]) for i in range(k)]


def cross_val_accuracy(X, y, k: int = 5, seed: int = 0, **forest_kw) -> np.ndarray:
    """Per-fold accuracy of a freshly trained forest."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    scores = []
    for i, (tr, te) in enumerate(kfold_indices(len(y), k, seed)):
        rf = RandomForest(seed=seed + i, **forest_kw).fit(X[tr], y[tr])
        scores.append(float(np.mean(rf.predict(X[te]) == y[te])))
    return np.asarray(scores)
