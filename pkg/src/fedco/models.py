"""Loss models, gradients, local SGD updates, and weighted aggregation.

Two trainable models on labeled feature vectors:

* ``squared_svm`` — lam/2 ||w||^2 + 0.5 max(0, 1 - y w.x)^2 with signed
  labels for two classes, stacked one-vs-rest rows for more.
* ``logistic`` — multinomial cross-entropy with L2 penalty, one row per
  class, labels 0..C-1.

A model is always a flat float64 vector (bias folded in by the dataset as a
constant-1 feature); the 2-D row view is internal.  All reductions run in
ascending client/sample index order so results do not depend on scheduling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _backend as K
from .errors import ConfigError

SQUARED_SVM = "squared_svm"
LOGISTIC = "logistic"


@dataclass(frozen=True)
class LossModel:
    """Which loss to train and its L2 weight."""

    kind: str = SQUARED_SVM
    lam: float = 0.1
    n_classes: int = 2

    def __post_init__(self) -> None:
        if self.kind not in (SQUARED_SVM, LOGISTIC):
            raise ConfigError(f"unknown loss kind {self.kind!r}")
        if self.lam < 0:
            raise ConfigError("regularizer lam must be nonnegative")
        if self.n_classes < 2:
            raise ConfigError("need at least two classes")

    @property
    def n_out(self) -> int:
        if self.kind == SQUARED_SVM and self.n_classes == 2:
            return 1
        return self.n_classes

    def kind_code(self) -> int:
        return K.KIND_SVM if self.kind == SQUARED_SVM else K.KIND_LOGISTIC


def init_model(m: LossModel, dim: int) -> np.ndarray:
    return np.zeros(m.n_out * dim, dtype=np.float64)


def _rows(w: np.ndarray, m: LossModel) -> np.ndarray:
    w = np.ascontiguousarray(w, dtype=np.float64)
    if w.ndim != 1 or w.size % m.n_out != 0:
        raise ConfigError("model vector length incompatible with class count")
    return w.reshape(m.n_out, -1)


def _check_batch(W: np.ndarray, X: np.ndarray) -> np.ndarray:
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != W.shape[1]:
        raise ConfigError(
            f"feature dimension {X.shape[-1] if X.ndim else '?'} does not match model ({W.shape[1]})"
        )
    return X


def batch_loss(w: np.ndarray, X: np.ndarray, y: np.ndarray, m: LossModel) -> float:
    """Mean per-sample loss over a nonempty batch."""
    W = _rows(w, m)
    X = _check_batch(W, X)
    if X.shape[0] == 0:
        raise ValueError("batch must be nonempty")
    y = np.ascontiguousarray(y, dtype=np.int64)
    if m.kind == SQUARED_SVM:
        return K.svm_batch(W, X, y, m.lam)
    return K.logistic_batch(W, X, y, m.lam)


def batch_gradient(w: np.ndarray, X: np.ndarray, y: np.ndarray, m: LossModel) -> np.ndarray:
    """Gradient of :func:`batch_loss` (mean of per-sample gradients)."""
    W = _rows(w, m)
    X = _check_batch(W, X)
    if X.shape[0] == 0:
        raise ValueError("batch must be nonempty")
    y = np.ascontiguousarray(y, dtype=np.int64)
    G = np.empty_like(W)
    if m.kind == SQUARED_SVM:
        K.svm_batch(W, X, y, m.lam, grad_out=G)
    else:
        K.logistic_batch(W, X, y, m.lam, grad_out=G)
    return G.reshape(-1)


def sample_loss(w: np.ndarray, x: np.ndarray, y: int, m: LossModel) -> float:
    return batch_loss(w, np.asarray(x, dtype=np.float64)[None, :], np.asarray([y]), m)


def sample_gradient(w: np.ndarray, x: np.ndarray, y: int, m: LossModel) -> np.ndarray:
    return batch_gradient(w, np.asarray(x, dtype=np.float64)[None, :], np.asarray([y]), m)


def local_update(w: np.ndarray, X: np.ndarray, y: np.ndarray, eta: float, m: LossModel) -> np.ndarray:
    """One SGD step w' = w - eta * batch_gradient."""
    if eta < 0:
        raise ValueError("learning rate must be nonnegative")
    return w - eta * batch_gradient(w, X, y, m)


def run_local_steps(
    w: np.ndarray,
    buf_X: np.ndarray,
    buf_y: np.ndarray,
    batch_idx: np.ndarray,
    eta: float,
    m: LossModel,
) -> np.ndarray:
    """Run one SGD step per row of ``batch_idx`` (the hot loop).

    The caller draws the per-step batch indices so the RNG stream stays
    identical whichever kernel backend is active.
    """
    W = _rows(w, m).copy()
    buf_X = np.ascontiguousarray(buf_X, dtype=np.float64)
    buf_y = np.ascontiguousarray(buf_y, dtype=np.int64)
    idx = np.ascontiguousarray(batch_idx, dtype=np.int64)
    K.chain_steps(m.kind_code(), W, buf_X, buf_y, idx, float(eta), m.lam)
    return W.reshape(-1)


def aggregate(models: list[np.ndarray], weights: list[float]) -> np.ndarray:
    """Weighted model average sum(D_i w_i) / sum(D_i), in client-index order."""
    if len(models) != len(weights):
        raise ValueError("models and weights must have equal length")
    if not models:
        raise ValueError("nothing to aggregate")
    total = math.fsum(weights)
    for d in weights:
        if d <= 0:
            raise ValueError("aggregation weights must be positive")
    out = np.zeros_like(models[0], dtype=np.float64)
    for wvec, d in zip(models, weights):
        if wvec.shape != out.shape:
            raise ValueError("all models must share one shape")
        out += d * wvec
    out /= total
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("aggregated model contains non-finite entries")
    return out


def predict(w: np.ndarray, X: np.ndarray, m: LossModel) -> np.ndarray:
    """Class decisions; a zero binary SVM score resolves to +1."""
    W = _rows(w, m)
    X = _check_batch(W, X)
    if W.shape[0] == 1:
        scores = X @ W[0]
        return np.where(scores >= 0.0, 1, -1).astype(np.int64)
    return np.argmax(X @ W.T, axis=1).astype(np.int64)


def evaluate(w: np.ndarray, X: np.ndarray, y: np.ndarray, m: LossModel) -> tuple[float, float]:
    """(mean loss, accuracy) on a nonempty labeled set."""
    if len(X) == 0:
        raise ValueError("test set must be nonempty")
    loss = batch_loss(w, X, y, m)
    acc = float(np.mean(predict(w, X, m) == np.asarray(y)))
    return loss, acc
