# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels: Euclidean distance matrix and the per-row HE boundary walk.

Mirrors ``_pykernels`` function for function.
"""

from libc.math cimport sqrt, INFINITY
from libc.stdlib cimport malloc, free

cimport numpy as cnp

cnp.import_array()

DEF STATUS_OK = 0
DEF STATUS_NO_POSITIVES = 1
DEF STATUS_NO_NEGATIVES = 2


def pairwise_euclidean(const double[:, ::1] a, const double[:, ::1] b):
    import numpy as np
    cdef Py_ssize_t na = a.shape[0], nb = b.shape[0], dim = a.shape[1]
    out_arr = np.empty((na, nb), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j, k
    cdef double acc, diff
    with nogil:
        for i in range(na):
            for j in range(nb):
                acc = 0.0
                for k in range(dim):
                    diff = a[i, k] - b[j, k]
                    acc = acc + diff * diff
                out[i, j] = sqrt(acc)
    return out_arr


cdef inline void _walk(const double* pos, Py_ssize_t n_p, const double* neg, Py_ssize_t n_n,
                       double* t_out, Py_ssize_t* hp_out, Py_ssize_t* hn_out,
                       Py_ssize_t* it_out) noexcept nogil:
    cdef Py_ssize_t n_hp = n_p, n_hn = 0, k, iterations = 0
    cdef double d_p = pos[0] if n_p > 0 else INFINITY
    cdef double d_n = neg[0] if n_n > 0 else INFINITY
    cdef double t = 0.0
    while n_hp != n_hn:
        if d_p <= d_n:
            t = d_p
            n_hp -= 1
            k = n_p - n_hp
            d_p = pos[k] if k < n_p else INFINITY
        else:
            t = d_n
            n_hn += 1
            d_n = neg[n_hn] if n_hn < n_n else INFINITY
        iterations += 1
    t_out[0] = t
    hp_out[0] = n_hp
    hn_out[0] = n_hn
    it_out[0] = iterations


def boundary_walk(const double[::1] pos, const double[::1] neg):
    cdef double t
    cdef Py_ssize_t n_hp, n_hn, iterations
    cdef double dummy = 0.0
    cdef const double* pp = &pos[0] if pos.shape[0] > 0 else &dummy
    cdef const double* np_ = &neg[0] if neg.shape[0] > 0 else &dummy
    _walk(pp, pos.shape[0], np_, neg.shape[0], &t, &n_hp, &n_hn, &iterations)
    return t, n_hp, n_hn, iterations


def he_rows(const double[:, ::1] dist, const cnp.intp_t[:, ::1] order,
            const cnp.int8_t[:, ::1] roles, double[::1] loss, double[::1] t_out,
            cnp.int8_t[:, ::1] hard, cnp.int32_t[::1] status,
            Py_ssize_t start, Py_ssize_t stop):
    cdef Py_ssize_t n_keys = dist.shape[1]
    cdef double* pos = <double*> malloc(max(n_keys, 1) * sizeof(double))
    cdef double* neg = <double*> malloc(max(n_keys, 1) * sizeof(double))
    cdef Py_ssize_t* pos_idx = <Py_ssize_t*> malloc(max(n_keys, 1) * sizeof(Py_ssize_t))
    cdef Py_ssize_t* neg_idx = <Py_ssize_t*> malloc(max(n_keys, 1) * sizeof(Py_ssize_t))
    if pos == NULL or neg == NULL or pos_idx == NULL or neg_idx == NULL:
        free(pos); free(neg); free(pos_idx); free(neg_idx)
        raise MemoryError()
    cdef Py_ssize_t r, j, c, n_p, n_n, n_hp, n_hn, iterations
    cdef double t, total
    cdef cnp.int8_t role
    try:
        with nogil:
            for r in range(start, stop):
                n_p = 0
                n_n = 0
                for j in range(n_keys):
                    hard[r, j] = 0
                    c = order[r, j]
                    role = roles[r, c]
                    if role == 1:
                        pos[n_p] = dist[r, c]
                        pos_idx[n_p] = c
                        n_p += 1
                    elif role == -1:
                        neg[n_n] = dist[r, c]
                        neg_idx[n_n] = c
                        n_n += 1
                if n_p == 0:
                    status[r] = STATUS_NO_POSITIVES
                    continue
                if n_n == 0:
                    status[r] = STATUS_NO_NEGATIVES
                    continue
                _walk(pos, n_p, neg, n_n, &t, &n_hp, &n_hn, &iterations)
                total = 0.0
                for j in range(n_p - n_hp, n_p):
                    total = total + (pos[j] - t)
                    hard[r, pos_idx[j]] = 1
                for j in range(n_hn):
                    total = total + (t - neg[j])
                    hard[r, neg_idx[j]] = -1
                loss[r] = total
                t_out[r] = t
                status[r] = STATUS_OK
    finally:
        free(pos); free(neg); free(pos_idx); free(neg_idx)
