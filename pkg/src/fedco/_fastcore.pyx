# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled training kernels; see fedco._kernels_py for the contract."""

import numpy as np

cimport numpy as cnp

cnp.import_array()

BACKEND_NAME = "cython"

DEF _KIND_SVM = 0

KIND_SVM = 0
KIND_LOGISTIC = 1

ctypedef cnp.float64_t f64
ctypedef cnp.int64_t i64


cdef double _reg_term(double[:, ::1] W, double lam) noexcept nogil:
    cdef Py_ssize_t c, k
    cdef double acc = 0.0
    for c in range(W.shape[0]):
        for k in range(W.shape[1]):
            acc += W[c, k] * W[c, k]
    return 0.5 * lam * acc


cdef double _svm_core(double[:, ::1] W, double[:, ::1] X, i64[::1] y,
                      double lam, double[:, ::1] G, bint want_grad) noexcept nogil:
    cdef Py_ssize_t n = X.shape[0]
    cdef Py_ssize_t d = W.shape[1]
    cdef Py_ssize_t c_out = W.shape[0]
    cdef Py_ssize_t i, k, c
    cdef double score, act, sign, coef
    cdef double loss = _reg_term(W, lam)
    cdef double hinge = 0.0

    if want_grad:
        for c in range(c_out):
            for k in range(d):
                G[c, k] = lam * W[c, k]

    if c_out == 1:
        for i in range(n):
            score = 0.0
            for k in range(d):
                score += W[0, k] * X[i, k]
            act = 1.0 - y[i] * score
            if act > 0.0:
                hinge += act * act
                if want_grad:
                    coef = -(<double> y[i]) * act / n
                    for k in range(d):
                        G[0, k] += coef * X[i, k]
    else:
        for i in range(n):
            for c in range(c_out):
                score = 0.0
                for k in range(d):
                    score += W[c, k] * X[i, k]
                sign = 1.0 if c == y[i] else -1.0
                act = 1.0 - sign * score
                if act > 0.0:
                    hinge += act * act
                    if want_grad:
                        coef = -sign * act / n
                        for k in range(d):
                            G[c, k] += coef * X[i, k]
    return loss + 0.5 * hinge / n


cdef double _logistic_core(double[:, ::1] W, double[:, ::1] X, i64[::1] y,
                           double lam, double[:, ::1] G, bint want_grad,
                           double[::1] scratch) noexcept nogil:
    cdef Py_ssize_t n = X.shape[0]
    cdef Py_ssize_t d = W.shape[1]
    cdef Py_ssize_t c_out = W.shape[0]
    cdef Py_ssize_t i, k, c
    cdef double smax, norm, coef
    cdef double loss = _reg_term(W, lam)

    if want_grad:
        for c in range(c_out):
            for k in range(d):
                G[c, k] = lam * W[c, k]

    for i in range(n):
        smax = -1e300
        for c in range(c_out):
            scratch[c] = 0.0
            for k in range(d):
                scratch[c] += W[c, k] * X[i, k]
            if scratch[c] > smax:
                smax = scratch[c]
        norm = 0.0
        for c in range(c_out):
            scratch[c] = exp(scratch[c] - smax)
            norm += scratch[c]
        loss -= (log(scratch[y[i]] / norm)) / n
        if want_grad:
            for c in range(c_out):
                coef = scratch[c] / norm
                if c == y[i]:
                    coef -= 1.0
                coef /= n
                for k in range(d):
                    G[c, k] += coef * X[i, k]
    return loss


cdef extern from "math.h" nogil:
    double exp(double)
    double log(double)


def svm_batch(double[:, ::1] W, double[:, ::1] X, i64[::1] y, double lam,
              grad_out=None):
    cdef double[:, ::1] G
    if grad_out is None:
        return _svm_core(W, X, y, lam, W, False)
    G = grad_out
    return _svm_core(W, X, y, lam, G, True)


def logistic_batch(double[:, ::1] W, double[:, ::1] X, i64[::1] y, double lam,
                   grad_out=None):
    cdef double[::1] scratch = np.empty(W.shape[0], dtype=np.float64)
    cdef double[:, ::1] G
    if grad_out is None:
        return _logistic_core(W, X, y, lam, W, False, scratch)
    G = grad_out
    return _logistic_core(W, X, y, lam, G, True, scratch)


def chain_steps(int kind, double[:, ::1] W, double[:, ::1] BX, i64[::1] by,
                i64[:, ::1] idx, double eta, double lam):
    cdef Py_ssize_t tau = idx.shape[0]
    cdef Py_ssize_t s = idx.shape[1]
    cdef Py_ssize_t d = W.shape[1]
    cdef Py_ssize_t c_out = W.shape[0]
    cdef Py_ssize_t r, i, c, k
    cdef cnp.ndarray Xb_arr = np.empty((s, d), dtype=np.float64)
    cdef cnp.ndarray yb_arr = np.empty(s, dtype=np.int64)
    cdef cnp.ndarray G_arr = np.empty((c_out, d), dtype=np.float64)
    cdef double[:, ::1] Xb = Xb_arr
    cdef i64[::1] yb = yb_arr
    cdef double[:, ::1] G = G_arr
    cdef double[::1] scratch = np.empty(c_out, dtype=np.float64)

    with nogil:
        for r in range(tau):
            for i in range(s):
                yb[i] = by[idx[r, i]]
                for k in range(d):
                    Xb[i, k] = BX[idx[r, i], k]
            if kind == _KIND_SVM:
                _svm_core(W, Xb, yb, lam, G, True)
            else:
                _logistic_core(W, Xb, yb, lam, G, True, scratch)
            for c in range(c_out):
                for k in range(d):
                    W[c, k] -= eta * G[c, k]
    return np.asarray(W)


def reservoir_apply(double[:, ::1] bufX, i64[::1] bufy, double[:, ::1] X,
                    i64[::1] y, Py_ssize_t size, i64 count, i64[::1] js):
    cdef Py_ssize_t cap = bufX.shape[0]
    cdef Py_ssize_t d = bufX.shape[1]
    cdef Py_ssize_t i, k, jpos = 0
    cdef i64 j
    with nogil:
        for i in range(X.shape[0]):
            count += 1
            if count <= cap:
                for k in range(d):
                    bufX[size, k] = X[i, k]
                bufy[size] = y[i]
                size += 1
            else:
                j = js[jpos]
                jpos += 1
                if j <= cap:
                    for k in range(d):
                        bufX[j - 1, k] = X[i, k]
                    bufy[j - 1] = y[i]
    return size, count
