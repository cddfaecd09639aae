# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled CTC lattice kernels (hot path).

Same contract as the pure-numpy backend `_ctclat_py`: log-space
forward/backward dynamic programming over the extended label sequence,
-inf marking impossible states.  Loops run without the GIL, so per-sentence
lattices inside a batch can be computed by parallel threads.
"""

from libc.math cimport exp, log1p, INFINITY

import numpy as np

cimport numpy as cnp

cnp.import_array()

NEG_INF = -np.inf


cdef inline double _logadd(double a, double b) noexcept nogil:
    if a == -INFINITY:
        return b
    if b == -INFINITY:
        return a
    if a >= b:
        return a + log1p(exp(b - a))
    return b + log1p(exp(a - b))


cdef void _forward(const double[:, ::1] lp, const int[::1] ext,
                   double[:, ::1] alpha) noexcept nogil:
    cdef Py_ssize_t T = lp.shape[0]
    cdef Py_ssize_t L = ext.shape[0]
    cdef Py_ssize_t t, s
    cdef int blank = ext[0]
    cdef double acc

    alpha[0, 0] = lp[0, ext[0]]
    if L > 1:
        alpha[0, 1] = lp[0, ext[1]]
    for t in range(1, T):
        for s in range(L):
            acc = alpha[t - 1, s]
            if s >= 1:
                acc = _logadd(acc, alpha[t - 1, s - 1])
            if s >= 2 and ext[s] != blank and ext[s] != ext[s - 2]:
                acc = _logadd(acc, alpha[t - 1, s - 2])
            alpha[t, s] = acc + lp[t, ext[s]]


cdef void _backward(const double[:, ::1] lp, const int[::1] ext,
                    double[:, ::1] beta) noexcept nogil:
    cdef Py_ssize_t T = lp.shape[0]
    cdef Py_ssize_t L = ext.shape[0]
    cdef Py_ssize_t t, s
    cdef int blank = ext[0]
    cdef double acc

    beta[T - 1, L - 1] = 0.0
    if L > 1:
        beta[T - 1, L - 2] = 0.0
    for t in range(T - 2, -1, -1):
        for s in range(L):
            acc = beta[t + 1, s] + lp[t + 1, ext[s]]
            if s + 1 < L:
                acc = _logadd(acc, beta[t + 1, s + 1] + lp[t + 1, ext[s + 1]])
            if s + 2 < L and ext[s + 2] != blank and ext[s + 2] != ext[s]:
                acc = _logadd(acc, beta[t + 1, s + 2] + lp[t + 1, ext[s + 2]])
            beta[t, s] = acc


def lattice_forward(lp, ext):
    """Forward pass; returns (alpha grid (T, L), total log-probability)."""
    cdef double[:, ::1] lp_v = np.ascontiguousarray(lp, dtype=np.float64)
    cdef int[::1] ext_v = np.ascontiguousarray(ext, dtype=np.intc)
    cdef Py_ssize_t T = lp_v.shape[0]
    cdef Py_ssize_t L = ext_v.shape[0]
    alpha_arr = np.full((T, L), NEG_INF, dtype=np.float64)
    cdef double[:, ::1] alpha = alpha_arr
    cdef double total
    with nogil:
        _forward(lp_v, ext_v, alpha)
        if L > 1:
            total = _logadd(alpha[T - 1, L - 1], alpha[T - 1, L - 2])
        else:
            total = alpha[T - 1, 0]
    return alpha_arr, total


def lattice_backward(lp, ext):
    """Backward pass; beta[t, s] covers emissions after frame t plus the end constraint."""
    cdef double[:, ::1] lp_v = np.ascontiguousarray(lp, dtype=np.float64)
    cdef int[::1] ext_v = np.ascontiguousarray(ext, dtype=np.intc)
    cdef Py_ssize_t T = lp_v.shape[0]
    cdef Py_ssize_t L = ext_v.shape[0]
    beta_arr = np.full((T, L), NEG_INF, dtype=np.float64)
    cdef double[:, ::1] beta = beta_arr
    with nogil:
        _backward(lp_v, ext_v, beta)
    return beta_arr


def lattice_loss_grad(lp, ext):
    """Returns (total log-probability, occupancy (T, C)); see _ctclat_py."""
    cdef double[:, ::1] lp_v = np.ascontiguousarray(lp, dtype=np.float64)
    cdef int[::1] ext_v = np.ascontiguousarray(ext, dtype=np.intc)
    cdef Py_ssize_t T = lp_v.shape[0]
    cdef Py_ssize_t L = ext_v.shape[0]
    cdef Py_ssize_t C = lp_v.shape[1]

    alpha_arr = np.full((T, L), NEG_INF, dtype=np.float64)
    beta_arr = np.full((T, L), NEG_INF, dtype=np.float64)
    occ_arr = np.zeros((T, C), dtype=np.float64)
    cdef double[:, ::1] alpha = alpha_arr
    cdef double[:, ::1] beta = beta_arr
    cdef double[:, ::1] occ = occ_arr
    cdef double total, joint
    cdef Py_ssize_t t, s

    with nogil:
        _forward(lp_v, ext_v, alpha)
        if L > 1:
            total = _logadd(alpha[T - 1, L - 1], alpha[T - 1, L - 2])
        else:
            total = alpha[T - 1, 0]
        if total != -INFINITY:
            _backward(lp_v, ext_v, beta)
            for t in range(T):
                for s in range(L):
                    joint = alpha[t, s] + beta[t, s]
                    if joint != -INFINITY:
                        occ[t, ext_v[s]] += exp(joint - total)
    return total, occ_arr
