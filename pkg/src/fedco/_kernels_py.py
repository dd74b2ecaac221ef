"""Pure-numpy implementations of the hot training kernels.

Same call signatures as the compiled module ``fedco._fastcore``; which one
is active is decided once at import time in :mod:`fedco._backend`.

Weight matrices are ``(n_out, d)`` float64 arrays.  For the squared-hinge
SVM, ``n_out == 1`` means a single binary separator with signed labels in
{-1, +1}; ``n_out >= 2`` means one-vs-rest rows with integer class labels.
The multinomial logistic model always uses one row per class.
"""

from __future__ import annotations

import numpy as np

BACKEND_NAME = "numpy"

KIND_SVM = 0
KIND_LOGISTIC = 1


def svm_batch(W, X, y, lam, grad_out=None):
    """Mean squared-hinge loss over a batch; optionally fill the gradient.

    Loss per sample: lam/2 * ||W||^2 + sum_c 0.5 * max(0, 1 - y_c w_c.x)^2.
    """
    n = X.shape[0]
    reg = 0.5 * lam * float(np.sum(W * W))
    if W.shape[0] == 1:
        scores = X @ W[0]
        act = np.maximum(1.0 - y * scores, 0.0)
        loss = reg + 0.5 * float(act @ act) / n
        if grad_out is not None:
            grad_out[0] = lam * W[0] - (X.T @ (y * act)) / n
        return loss
    scores = X @ W.T
    sign = np.full_like(scores, -1.0)
    sign[np.arange(n), y] = 1.0
    act = np.maximum(1.0 - sign * scores, 0.0)
    loss = reg + 0.5 * float(np.sum(act * act)) / n
    if grad_out is not None:
        grad_out[...] = lam * W - ((sign * act).T @ X) / n
    return loss


def logistic_batch(W, X, y, lam, grad_out=None):
    """Mean multinomial cross-entropy with L2 penalty; optional gradient."""
    n = X.shape[0]
    reg = 0.5 * lam * float(np.sum(W * W))
    scores = X @ W.T
    shift = scores - scores.max(axis=1, keepdims=True)
    expz = np.exp(shift)
    norm = expz.sum(axis=1)
    logp = shift[np.arange(n), y] - np.log(norm)
    loss = reg - float(np.sum(logp)) / n
    if grad_out is not None:
        probs = expz / norm[:, None]
        probs[np.arange(n), y] -= 1.0
        grad_out[...] = lam * W + probs.T @ X / n
    return loss


def chain_steps(kind, W, BX, by, idx, eta, lam):
    """Run ``idx.shape[0]`` SGD steps in place on W.

    Row r of ``idx`` holds the buffer positions of the mini-batch used by
    step r; the caller draws them so that the RNG stream is independent of
    the backend in use.
    """
    batch_fn = svm_batch if kind == KIND_SVM else logistic_batch
    grad = np.empty_like(W)
    for r in range(idx.shape[0]):
        rows = idx[r]
        batch_fn(W, BX[rows], by[rows], lam, grad_out=grad)
        W -= eta * grad
    return W


def reservoir_apply(bufX, bufy, X, y, size, count, js):
    """Feed arrivals through the classic reservoir rule.

    ``js`` holds one pre-drawn 1-based slot index per arrival that lands
    after the buffer is full (count after increment > capacity); arrivals
    that still fit are appended.  Returns ``(size, count)`` updated.
    """
    cap = bufX.shape[0]
    jpos = 0
    for i in range(X.shape[0]):
        count += 1
        if count <= cap:
            bufX[size] = X[i]
            bufy[size] = y[i]
            size += 1
        else:
            j = js[jpos]
            jpos += 1
            if j <= cap:
                bufX[j - 1] = X[i]
                bufy[j - 1] = y[i]
    return size, count
