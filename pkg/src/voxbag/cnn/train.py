"""Mini-batch SGD with momentum."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..errors import ClassAbsentError, ConfigError, DataError, NumericalError
from .layers import cross_entropy
from .network import NetworkSpec, forward, backward, learnable_keys

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    momentum: float = 0.9
    batch_size: int = 8
    epochs: int = 50
    seed: int = 0
    # stop early once eval-mode training accuracy reaches this value
    target_accuracy: Optional[float] = None
    # return the epoch with the lowest eval-mode training loss, not the last
    keep_best: bool = True

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if not 0 <= self.momentum < 1:
            raise ConfigError("momentum must lie in [0, 1)")


def _batches(order: np.ndarray, size: int) -> list:
    chunks = [order[s:s + size] for s in range(0, len(order), size)]
    # a trailing single-sample batch cannot feed train-mode batch norm
    if len(chunks) > 1 and len(chunks[-1]) == 1:
        chunks[-2] = np.concatenate(chunks[-2:])
        chunks.pop()
    return chunks


def evaluate(network: NetworkSpec, params: dict, X, y, chunk: int = 32) -> tuple[float, float]:
    """Eval-mode ``(mean cross-entropy, accuracy)`` over a dataset."""
    logits = []
    for s in range(0, len(X), chunk):
        logits.append(forward(network, params, X[s:s + chunk], mode="eval")[0])
    logits = np.concatenate(logits)
    pred = np.argmax(logits, axis=1)
    return cross_entropy(logits, y), float(np.mean(pred == y))


def train(network: NetworkSpec, params: dict, X, y, config: TrainConfig = TrainConfig()):
    """Fit ``params`` (copied, not mutated) on ``X``/``y``.

    Returns ``(trained_params, trace)`` where ``trace`` holds one dict per
    epoch with the mean train-mode batch loss and eval-mode loss/accuracy on
    the training set. With ``keep_best`` the returned parameters are those
    of the epoch with the lowest eval loss (earliest on ties).
    """
    X = np.asarray(X)
    y = np.asarray(y, dtype=np.int64)
    if len(X) == 0:
        raise DataError("training set is empty")
    if len(X) != len(y):
        raise DataError(f"{len(X)} inputs but {len(y)} labels")
    if len(np.unique(y)) < 2:
        raise ClassAbsentError("training labels contain a single class")
    params = {k: v.copy() for k, v in params.items()}
    keys = learnable_keys(params)
    velocity = {k: np.zeros_like(params[k]) for k in keys}
    lr = params[keys[0]].dtype.type(config.learning_rate)
    mu = params[keys[0]].dtype.type(config.momentum)
    rng = np.random.default_rng(config.seed)
    trace = []
    best, best_loss = params, np.inf
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(X))
        total = 0.0
        for b, idx in enumerate(_batches(order, config.batch_size)):
            logits, _, cache = forward(network, params, X[idx], mode="train")
            loss = cross_entropy(logits, y[idx])
            if not np.isfinite(loss):
                raise NumericalError(f"non-finite loss at epoch {epoch}, batch {b}")
            grads = backward(network, params, cache, y[idx])
            for k in keys:
                velocity[k] = mu * velocity[k] - lr * grads[k].astype(velocity[k].dtype)
                params[k] = params[k] + velocity[k]
            params.update(cache.running_updates)
            total += loss * len(idx)
        eval_loss, acc = evaluate(network, params, X, y)
        trace.append({"epoch": epoch, "train_loss": total / len(X), "eval_loss": eval_loss, "accuracy": acc})
        log.info("epoch %d loss %.4f eval-acc %.3f", epoch, total / len(X), acc)
        if eval_loss < best_loss:
            best, best_loss = dict(params), eval_loss
        if config.target_accuracy is not None and acc >= config.target_accuracy:
            break
    return (best if config.keep_best else params), trace
