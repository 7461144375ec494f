"""Comparison classifiers: kNN, Gaussian naive Bayes, random forest, RVFL, linear SVM.

Every model exposes ``predict_proba(X) -> (n, 2)`` rows summing to one and
``predict(X)`` as their argmax with ties going to class 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import ensemble
from .ensemble import BaggingConfig, BaggingModel, TreeConfig
from .errors import ClassAbsentError, ConfigError, DataError, NumericalError, ShapeError


def _check_xy(X, y, need_both=True):
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if X.ndim != 2 or len(X) == 0:
        raise DataError(f"need a non-empty 2-D feature matrix, got shape {X.shape}")
    if y.shape != (len(X),):
        raise DataError(f"{len(X)} rows but labels of shape {y.shape}")
    if need_both and len(np.unique(y)) < 2:
        raise ClassAbsentError("both classes must be present")
    return X, y


def _rows(model_width: int, X) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != model_width:
        raise ShapeError(f"expected {model_width} features, got {X.shape[1]}")
    return X


class _Classifier:
    def predict(self, X) -> np.ndarray:
        return np.argmax(self.predict_proba(X), axis=1)


# -- k nearest neighbours ---------------------------------------------------------------


@dataclass(eq=False)
class KnnModel(_Classifier):
    X: np.ndarray
    y: np.ndarray
    k: int = 5

    def predict_proba(self, X) -> np.ndarray:
        Q = _rows(self.X.shape[1], X)
        d2 = ((Q[:, None, :] - self.X[None, :, :]) ** 2).sum(axis=2)
        # stable sort: equal distances keep the lower training index first
        nearest = np.argsort(d2, axis=1, kind="stable")[:, :self.k]
        votes = self.y[nearest]
        return np.column_stack([(votes == 0).sum(axis=1), (votes == 1).sum(axis=1)]) / self.k


def knn_fit(X, y, k: int = 5) -> KnnModel:
    X, y = _check_xy(X, y, need_both=False)
    if not 1 <= k <= len(X):
        raise ConfigError(f"k must lie in [1, {len(X)}], got {k}")
    return KnnModel(X.copy(), y.copy(), k)


# -- Gaussian naive Bayes ---------------------------------------------------------------


@dataclass(eq=False)
class GaussianNbModel(_Classifier):
    means: np.ndarray
    variances: np.ndarray
    priors: np.ndarray
    epsilon: float

    def predict_proba(self, X) -> np.ndarray:
        Q = _rows(self.means.shape[1], X)
        ll = -0.5 * (
            np.log(2 * np.pi * self.variances)[None, :, :]
            + (Q[:, None, :] - self.means[None, :, :]) ** 2 / self.variances[None, :, :]
        ).sum(axis=2)
        ll += np.log(self.priors)[None, :]
        ll -= ll.max(axis=1, keepdims=True)
        p = np.exp(ll)
        return p / p.sum(axis=1, keepdims=True)


def gnb_fit(X, y, var_smoothing: float = 1e-9) -> GaussianNbModel:
    X, y = _check_xy(X, y)
    eps = var_smoothing * float(X.var(axis=0).max())
    eps = max(eps, np.finfo(np.float64).tiny)
    classes = (0, 1)
    means = np.stack([X[y == c].mean(axis=0) for c in classes])
    variances = np.stack([X[y == c].var(axis=0) for c in classes]) + eps
    priors = np.array([np.mean(y == c) for c in classes])
    return GaussianNbModel(means, variances, priors, eps)


# -- random forest ------------------------------------------------------------------------


@dataclass(eq=False)
class RandomForestModel(_Classifier):
    bagging: BaggingModel
    m_try: int

    def predict_proba(self, X) -> np.ndarray:
        return np.atleast_2d(ensemble.predict_proba(self.bagging, np.atleast_2d(X)))


def default_m_try(d: int) -> int:
    return max(1, math.isqrt(d))


def rf_fit(X, y, n_bags: int = 50, tree: TreeConfig = TreeConfig(), seed: int = 0,
           m_try: Optional[int] = None, n_jobs: int = 1) -> RandomForestModel:
    """Bagged trees that consider ``m_try`` random features per split (default floor(sqrt(d)))."""
    X = np.asarray(X)
    m = default_m_try(X.shape[1]) if m_try is None else m_try
    cfg = BaggingConfig(
        n_bags=n_bags,
        tree=TreeConfig(tree.max_depth, tree.min_samples_split, tree.min_impurity_decrease, max_features=m),
        seed=seed,
        n_jobs=n_jobs,
    )
    return RandomForestModel(ensemble.fit_bagging(X, y, cfg), m)


# -- random vector functional link ------------------------------------------------------------


def _softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


@dataclass(eq=False)
class RvflModel(_Classifier):
    hidden_weights: np.ndarray
    hidden_bias: np.ndarray
    beta: np.ndarray
    ridge: float

    def design(self, X) -> np.ndarray:
        """``[X | relu(X Wh + bh) | 1]``."""
        X = _rows(self.hidden_weights.shape[0], X)
        h = np.maximum(X @ self.hidden_weights + self.hidden_bias, 0.0)
        return np.hstack([X, h, np.ones((len(X), 1))])

    def scores(self, X) -> np.ndarray:
        return self.design(X) @ self.beta

    def predict_proba(self, X) -> np.ndarray:
        return _softmax(self.scores(X))


def rvfl_fit(X, y, hidden: int = 256, ridge: float = 0.1, seed: int = 0) -> RvflModel:
    """Random ReLU hidden layer with direct links; ridge-solved output weights."""
    X, y = _check_xy(X, y)
    if ridge <= 0:
        raise ConfigError("RVFL ridge parameter must be > 0")
    if hidden < 0:
        raise ConfigError("hidden width must be >= 0")
    rng = np.random.default_rng(seed)
    wh = rng.uniform(-1.0, 1.0, size=(X.shape[1], hidden))
    bh = rng.uniform(-1.0, 1.0, size=hidden)
    model = RvflModel(wh, bh, np.zeros((X.shape[1] + hidden + 1, 2)), ridge)
    D = model.design(X)
    Y = np.eye(2)[y]
    A = D.T @ D + ridge * np.eye(D.shape[1])
    model.beta = np.linalg.solve(A, D.T @ Y)
    return model


def rvfl_residual(model: RvflModel, X, y) -> tuple[float, float]:
    """``(max-abs residual of the normal equations, scale)`` for a fit.

    ``scale`` is ``max(|A| |beta| + |D^T Y|)`` elementwise, the magnitude
    the residual is measured against.
    """
    D = model.design(X)
    Y = np.eye(2)[np.asarray(y, dtype=np.int64)]
    A = D.T @ D + model.ridge * np.eye(D.shape[1])
    rhs = D.T @ Y
    resid = np.abs(A @ model.beta - rhs).max()
    scale = (np.abs(A) @ np.abs(model.beta) + np.abs(rhs)).max()
    return float(resid), float(scale)


# -- linear SVM ----------------------------------------------------------------------------


@dataclass(eq=False)
class LinearSvmModel(_Classifier):
    weights: np.ndarray
    bias: float
    lam: float
    objective_trace: list = field(default_factory=list)

    def margin(self, X) -> np.ndarray:
        return _rows(len(self.weights), X) @ self.weights + self.bias

    def predict_proba(self, X) -> np.ndarray:
        # uncalibrated logistic squash, only used for ranking
        p1 = 0.5 * (1.0 + np.tanh(0.5 * self.margin(X)))
        return np.column_stack([1.0 - p1, p1])


def svm_objective(w_aug, Xa, ys, lam) -> float:
    hinge = np.maximum(0.0, 1.0 - ys * (Xa @ w_aug))
    return float(0.5 * lam * w_aug @ w_aug + hinge.mean())


def svm_fit(X, y, lam: float = 0.01, epochs: int = 200, seed: int = 0,
            batch_size: Optional[int] = None) -> LinearSvmModel:
    """Pegasos-style subgradient descent on ``lam/2 |w|^2 + mean hinge``.

    Labels are 0/1 (mapped to -1/+1). The bias is a constant input column
    regularized with the weights. Step ``1/(lam t)``; the returned model is
    the running average of the iterates, and ``objective_trace`` records the
    objective of that average after every epoch.
    """
    X, y = _check_xy(X, y)
    if lam <= 0:
        raise ConfigError("SVM regularization must be > 0")
    ys = np.where(y == 1, 1.0, -1.0)
    Xa = np.hstack([X, np.ones((len(X), 1))])
    n = len(Xa)
    bs = n if batch_size is None else batch_size
    rng = np.random.default_rng(seed)
    w = np.zeros(Xa.shape[1])
    avg = np.zeros_like(w)
    t = 0
    trace = []
    for epoch in range(epochs):
        order = rng.permutation(n) if bs < n else np.arange(n)
        for s in range(0, n, bs):
            idx = order[s:s + bs]
            t += 1
            viol = ys[idx] * (Xa[idx] @ w) < 1.0
            grad = lam * w - (ys[idx, None] * Xa[idx])[viol].sum(axis=0) / len(idx)
            w = w - grad / (lam * t)
            avg += (w - avg) / t
        if not np.all(np.isfinite(avg)):
            raise NumericalError(f"SVM weights diverged at epoch {epoch}")
        trace.append(svm_objective(avg, Xa, ys, lam))
    return LinearSvmModel(avg[:-1].copy(), float(avg[-1]), lam, trace)
