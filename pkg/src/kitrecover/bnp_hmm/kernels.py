"""HMM recursions: log-space forward filter, scaled forward-backward, Viterbi.

Each kernel has a numba version (``*_nb``) and a vectorized numpy version
(``*_np``).  The public names dispatch on :func:`kitrecover._accel.use_jit`.
All inputs are natural-log potentials; ``log_A[j, k]`` is the log weight of
moving from state ``j`` to ``k``.
"""
from __future__ import annotations

import numpy as np

from .._accel import njit, use_jit


# ---------------------------------------------------------------- numpy paths

def _lse_np(v, axis=None):
    # scipy's logsumexp costs more in argument handling than in arithmetic on K-vectors
    m = np.max(v, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    out = np.log(np.sum(np.exp(v - m), axis=axis, keepdims=True)) + m
    return out.squeeze(axis) if axis is not None else float(out.ravel()[0])


def forward_log_np(log_pi0, log_A, log_b):
    T, K = log_b.shape
    log_alpha = np.empty((T, K))
    cum = np.empty(T)
    log_alpha[0] = log_pi0 + log_b[0]
    cum[0] = _lse_np(log_alpha[0])
    for t in range(1, T):
        log_alpha[t] = log_b[t] + _lse_np(log_alpha[t - 1][:, None] + log_A, axis=0)
        cum[t] = _lse_np(log_alpha[t])
    return log_alpha, cum


def forward_backward_np(log_pi0, log_A, log_b):
    T, K = log_b.shape
    shift = log_b.max(axis=1)
    B = np.exp(log_b - shift[:, None])
    A = np.exp(log_A)
    alpha = np.empty((T, K))
    c = np.empty(T)
    a = np.exp(log_pi0) * B[0]
    c[0] = a.sum()
    alpha[0] = a / c[0]
    for t in range(1, T):
        a = (alpha[t - 1] @ A) * B[t]
        c[t] = a.sum()
        alpha[t] = a / c[t]
    beta = np.ones((T, K))
    xi = np.zeros((K, K))
    for t in range(T - 2, -1, -1):
        bb = B[t + 1] * beta[t + 1]
        xi += np.outer(alpha[t], bb) * A / c[t + 1]
        beta[t] = (A @ bb) / c[t + 1]
    resp = alpha * beta
    resp /= resp.sum(axis=1, keepdims=True)
    log_z = np.log(c).sum() + shift.sum()
    return resp, xi, log_z


def viterbi_np(log_pi0, log_A, log_b):
    T, K = log_b.shape
    delta = log_pi0 + log_b[0]
    back = np.zeros((T, K), dtype=np.int64)
    for t in range(1, T):
        scores = delta[:, None] + log_A
        back[t] = np.argmax(scores, axis=0)
        delta = scores[back[t], np.arange(K)] + log_b[t]
    path = np.empty(T, dtype=np.int64)
    path[-1] = np.argmax(delta)
    for t in range(T - 1, 0, -1):
        path[t - 1] = back[t, path[t]]
    return path


# ---------------------------------------------------------------- numba paths

@njit
def _lse(v):
    m = v.max()
    if not np.isfinite(m):
        return m
    s = 0.0
    for i in range(v.shape[0]):
        s += np.exp(v[i] - m)
    return m + np.log(s)


@njit
def forward_log_nb(log_pi0, log_A, log_b):
    T, K = log_b.shape
    log_alpha = np.empty((T, K))
    cum = np.empty(T)
    tmp = np.empty(K)
    for k in range(K):
        log_alpha[0, k] = log_pi0[k] + log_b[0, k]
    cum[0] = _lse(log_alpha[0])
    for t in range(1, T):
        for k in range(K):
            for j in range(K):
                tmp[j] = log_alpha[t - 1, j] + log_A[j, k]
            log_alpha[t, k] = log_b[t, k] + _lse(tmp)
        cum[t] = _lse(log_alpha[t])
    return log_alpha, cum


@njit
def forward_backward_nb(log_pi0, log_A, log_b):
    T, K = log_b.shape
    A = np.exp(log_A)
    B = np.empty((T, K))
    shift_sum = 0.0
    for t in range(T):
        m = log_b[t].max()
        shift_sum += m
        for k in range(K):
            B[t, k] = np.exp(log_b[t, k] - m)
    alpha = np.empty((T, K))
    c = np.empty(T)
    s = 0.0
    for k in range(K):
        alpha[0, k] = np.exp(log_pi0[k]) * B[0, k]
        s += alpha[0, k]
    c[0] = s
    for k in range(K):
        alpha[0, k] /= s
    for t in range(1, T):
        s = 0.0
        for k in range(K):
            acc = 0.0
            for j in range(K):
                acc += alpha[t - 1, j] * A[j, k]
            alpha[t, k] = acc * B[t, k]
            s += alpha[t, k]
        c[t] = s
        for k in range(K):
            alpha[t, k] /= s
    beta = np.ones((T, K))
    xi = np.zeros((K, K))
    bb = np.empty(K)
    for t in range(T - 2, -1, -1):
        for k in range(K):
            bb[k] = B[t + 1, k] * beta[t + 1, k]
        for j in range(K):
            acc = 0.0
            for k in range(K):
                w = A[j, k] * bb[k]
                xi[j, k] += alpha[t, j] * w / c[t + 1]
                acc += w
            beta[t, j] = acc / c[t + 1]
    resp = np.empty((T, K))
    for t in range(T):
        s = 0.0
        for k in range(K):
            resp[t, k] = alpha[t, k] * beta[t, k]
            s += resp[t, k]
        for k in range(K):
            resp[t, k] /= s
    log_z = shift_sum
    for t in range(T):
        log_z += np.log(c[t])
    return resp, xi, log_z


@njit
def viterbi_nb(log_pi0, log_A, log_b):
    T, K = log_b.shape
    delta = np.empty(K)
    new = np.empty(K)
    back = np.zeros((T, K), dtype=np.int64)
    for k in range(K):
        delta[k] = log_pi0[k] + log_b[0, k]
    for t in range(1, T):
        for k in range(K):
            best = -np.inf
            arg = 0
            for j in range(K):
                v = delta[j] + log_A[j, k]
                if v > best:
                    best = v
                    arg = j
            back[t, k] = arg
            new[k] = best + log_b[t, k]
        for k in range(K):
            delta[k] = new[k]
    path = np.empty(T, dtype=np.int64)
    path[T - 1] = np.argmax(delta)
    for t in range(T - 1, 0, -1):
        path[t - 1] = back[t, path[t]]
    return path


# ---------------------------------------------------------------- dispatch

def _prep(log_pi0, log_A, log_b):
    return (
        np.ascontiguousarray(log_pi0, dtype=np.float64),
        np.ascontiguousarray(log_A, dtype=np.float64),
        np.ascontiguousarray(log_b, dtype=np.float64),
    )


def forward_log(log_pi0, log_A, log_b):
    """Return ``(log_alpha, L)`` where ``L[t] = log p(x_1..x_t)``."""
    args = _prep(log_pi0, log_A, log_b)
    return forward_log_nb(*args) if use_jit() else forward_log_np(*args)


def forward_backward(log_pi0, log_A, log_b):
    """Return ``(resp, xi_sum, log_Z)`` for possibly unnormalized potentials."""
    args = _prep(log_pi0, log_A, log_b)
    return forward_backward_nb(*args) if use_jit() else forward_backward_np(*args)


def viterbi(log_pi0, log_A, log_b):
    args = _prep(log_pi0, log_A, log_b)
    return viterbi_nb(*args) if use_jit() else viterbi_np(*args)
