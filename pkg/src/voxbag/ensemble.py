"""CART trees and the bootstrap-aggregated soft-voting ensemble.

Trees split on Gini impurity at midpoints between consecutive distinct
feature values and route ``x[feature] <= threshold`` to the left child.
Bootstrap repeats are carried as integer sample weights rather than
duplicated rows.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import kernels
from .errors import ClassAbsentError, DataError, ShapeError

# relative slack under which two split scores count as tied
TIE_RTOL = 1e-12


@dataclass(frozen=True)
class TreeConfig:
    max_depth: Optional[int] = 10
    min_samples_split: int = 2
    min_impurity_decrease: float = 0.0
    # features drawn per split; None means all (plain bagging)
    max_features: Optional[int] = None


@dataclass(frozen=True, eq=False)
class DecisionTree:
    """Array-backed binary tree, nodes in pre-order (root is node 0).

    Leaves have ``feature == -1`` and ``left == right == -1``.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    counts: np.ndarray
    n_features: int
    config: TreeConfig = field(default_factory=TreeConfig)

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def n_classes(self) -> int:
        return self.counts.shape[1]

    @property
    def posterior(self) -> np.ndarray:
        return self.counts / self.counts.sum(axis=1, keepdims=True)

    def depth(self) -> int:
        depth = np.zeros(self.n_nodes, dtype=np.int64)
        for i in range(self.n_nodes):
            if self.left[i] >= 0:
                depth[self.left[i]] = depth[self.right[i]] = depth[i] + 1
        return int(depth.max())

    def arrays(self) -> dict:
        return {"feature": self.feature, "threshold": self.threshold, "left": self.left,
                "right": self.right, "counts": self.counts}

    def __eq__(self, other):
        if not isinstance(other, DecisionTree):
            return NotImplemented
        return self.n_features == other.n_features and all(
            a.dtype == b.dtype and a.shape == b.shape and a.tobytes() == b.tobytes()
            for a, b in zip(self.arrays().values(), other.arrays().values())
        )


def gini(counts) -> float:
    counts = np.asarray(counts, dtype=np.float64)
    total = counts.sum()
    return 0.0 if total == 0 else float(1.0 - ((counts / total) ** 2).sum())


def best_split(X, y, w, features, n_classes: int = 2):
    """Best Gini split over ``features`` for the weighted samples given.

    Returns ``(feature, threshold, impurity_decrease)`` or None when no
    feature has two distinct values. Ties (within ``TIE_RTOL``) go to the
    lowest feature index, then the lowest threshold.
    """
    features = sorted(int(f) for f in features)
    scores, thresholds = kernels.split_scores(X, y, w, features, n_classes)
    if scores.size == 0:
        return None
    top = scores.max()
    if not np.isfinite(top):
        return None
    j, i = np.unravel_index(np.argmax(scores >= top - TIE_RTOL * max(1.0, abs(top))), scores.shape)
    parent = np.bincount(y, weights=w, minlength=n_classes)
    n = parent.sum()
    decrease = (scores[j, i] - (parent * parent).sum() / n) / n
    return features[j], float(thresholds[j, i]), float(max(decrease, 0.0))


def fit_tree(X, y, sample_weight=None, config: TreeConfig = TreeConfig(),
             rng: Optional[np.random.Generator] = None, n_classes: int = 2) -> DecisionTree:
    """Grow a CART tree greedily.

    ``sample_weight`` holds non-negative per-row multiplicities; zero-weight
    rows are ignored. A node becomes a leaf when it is pure, reaches
    ``max_depth``, carries less than ``min_samples_split`` weight, has no
    candidate split, or its best split improves impurity by less than
    ``min_impurity_decrease``.
    """
    X = np.asarray(X)
    if X.ndim != 2 or X.shape[0] == 0:
        raise DataError(f"fit_tree needs a non-empty 2-D feature matrix, got shape {X.shape}")
    if X.dtype not in (np.float32, np.float64):
        X = X.astype(np.float64)
    if not np.all(np.isfinite(X)):
        raise DataError("features must be finite")
    y = np.ascontiguousarray(y, dtype=np.int64)
    if y.shape != (X.shape[0],):
        raise DataError(f"{X.shape[0]} rows but labels of shape {y.shape}")
    w = np.ones(len(y)) if sample_weight is None else np.asarray(sample_weight, dtype=np.float64)
    if w.shape != y.shape or np.any(w < 0):
        raise DataError("sample weights must be non-negative, one per row")
    d = X.shape[1]
    m_try = config.max_features
    if m_try is not None and not 1 <= m_try <= d:
        raise DataError(f"max_features must lie in [1, {d}], got {m_try}")
    subsample = m_try is not None and m_try < d
    if subsample and rng is None:
        raise DataError("feature subsampling needs an rng")
    max_depth = np.inf if config.max_depth is None else config.max_depth
    all_features = list(range(d))

    feature, threshold, left, right, counts = [], [], [], [], []
    stack = [(np.flatnonzero(w > 0), 0, -1, False)]
    if len(stack[0][0]) == 0:
        raise DataError("all sample weights are zero")
    while stack:
        idx, depth, parent, is_right = stack.pop()
        node = len(feature)
        if parent >= 0:
            (right if is_right else left)[parent] = node
        yn, wn = y[idx], w[idx]
        cnt = np.bincount(yn, weights=wn, minlength=n_classes)
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        counts.append(cnt)
        if np.count_nonzero(cnt) <= 1 or depth >= max_depth or cnt.sum() < config.min_samples_split:
            continue
        feats = sorted(rng.choice(d, size=m_try, replace=False).tolist()) if subsample else all_features
        split = best_split(np.ascontiguousarray(X[idx]), yn, wn, feats, n_classes)
        if split is None or split[2] < config.min_impurity_decrease:
            continue
        f, thr, _ = split
        feature[node] = f
        threshold[node] = thr
        go_left = X[idx, f] <= thr
        stack.append((idx[~go_left], depth + 1, node, True))
        stack.append((idx[go_left], depth + 1, node, False))
    return DecisionTree(
        feature=np.array(feature, dtype=np.int64),
        threshold=np.array(threshold, dtype=np.float64),
        left=np.array(left, dtype=np.int64),
        right=np.array(right, dtype=np.int64),
        counts=np.array(counts, dtype=np.float64).reshape(-1, n_classes),
        n_features=d,
        config=config,
    )


def _leaf_index(tree: DecisionTree, X: np.ndarray) -> np.ndarray:
    node = np.zeros(len(X), dtype=np.int64)
    rows = np.arange(len(X))
    active = tree.left[node] >= 0
    while active.any():
        n = node[active]
        go_left = X[rows[active], tree.feature[n]] <= tree.threshold[n]
        node[active] = np.where(go_left, tree.left[n], tree.right[n])
        active = tree.left[node] >= 0
    return node


def _as_rows(x, width: int) -> tuple[np.ndarray, bool]:
    x = np.asarray(x)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.ndim != 2 or X.shape[1] != width:
        raise ShapeError(f"expected {width} features per row, got shape {x.shape}")
    return X, single


def tree_predict_proba(tree: DecisionTree, x) -> np.ndarray:
    X, single = _as_rows(x, tree.n_features)
    p = tree.posterior[_leaf_index(tree, X)]
    return p[0] if single else p


def bootstrap_sample(n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` uniform draws with replacement from ``range(n)``."""
    if n < 1:
        raise DataError("bootstrap needs n >= 1")
    return rng.integers(0, n, size=n)


@dataclass(frozen=True)
class BaggingConfig:
    n_bags: int = 50
    tree: TreeConfig = field(default_factory=TreeConfig)
    seed: int = 0
    voting: str = "soft"
    n_jobs: int = 1

    def __post_init__(self):
        if self.n_bags < 1:
            raise DataError("n_bags must be >= 1")
        if self.voting != "soft":
            raise DataError("only soft voting is supported")


@dataclass(frozen=True, eq=False)
class BaggingModel:
    trees: tuple
    bag_indices: tuple
    config: BaggingConfig = field(default_factory=BaggingConfig)
    class_count: int = 2

    def __eq__(self, other):
        if not isinstance(other, BaggingModel):
            return NotImplemented
        return (
            len(self.trees) == len(other.trees)
            and all(a == b for a, b in zip(self.trees, other.trees))
            and all(np.array_equal(a, b) for a, b in zip(self.bag_indices, other.bag_indices))
        )


def bag_streams(seed: int, n_bags: int) -> list:
    """Independent per-bag generators derived from the master seed."""
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n_bags)]


def _fit_one(X, y, cfg: TreeConfig, rng, n_classes):
    bag = bootstrap_sample(len(y), rng)
    weights = np.bincount(bag, minlength=len(y)).astype(np.float64)
    return bag, fit_tree(X, y, weights, cfg, rng, n_classes)


def fit_bagging(X, y, config: BaggingConfig = BaggingConfig()) -> BaggingModel:
    X = np.asarray(X)
    y = np.asarray(y, dtype=np.int64)
    if len(y) < 2:
        raise DataError("bagging needs at least 2 samples")
    n_classes = max(2, int(y.max()) + 1)
    if len(np.unique(y)) < 2:
        raise ClassAbsentError("bagging needs both classes present")
    streams = bag_streams(config.seed, config.n_bags)
    jobs = [(X, y, config.tree, rng, n_classes) for rng in streams]
    if config.n_jobs > 1:
        with ThreadPoolExecutor(config.n_jobs) as pool:
            fitted = list(pool.map(lambda a: _fit_one(*a), jobs))
    else:
        fitted = [_fit_one(*a) for a in jobs]
    return BaggingModel(
        trees=tuple(t for _, t in fitted),
        bag_indices=tuple(b for b, _ in fitted),
        config=config,
        class_count=n_classes,
    )


def predict_proba(model: BaggingModel, x) -> np.ndarray:
    """Unweighted mean of the trees' leaf posteriors.

    Per-sample tree outputs are sorted before summation so the result does
    not depend on tree order.
    """
    if not model.trees:
        raise DataError("model has no fitted trees")
    X, single = _as_rows(x, model.trees[0].n_features)
    stacked = np.stack([tree_predict_proba(t, X) for t in model.trees])
    p = np.sort(stacked, axis=0).sum(axis=0) / len(model.trees)
    return p[0] if single else p


def predict(model: BaggingModel, x) -> np.ndarray:
    """Class with the highest mean probability; exact ties go to class 0."""
    return np.argmax(predict_proba(model, x), axis=-1)
