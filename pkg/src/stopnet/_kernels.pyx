# cython: language_level=3
"""Compiled inner loops. Signatures and results mirror ``_kernels_py``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport floor

cnp.import_array()


def snell_envelope(const double[:, ::1] rewards, double tie_tol):
    cdef Py_ssize_t n = rewards.shape[0]
    cdef Py_ssize_t m = rewards.shape[1]
    cdef Py_ssize_t i, l
    cdef double run
    if m == 0:
        raise ValueError("reward paths must be nonempty")
    envelope_arr = np.empty((n, m), dtype=np.float64)
    stop_arr = np.empty(n, dtype=np.int64)
    cdef double[:, ::1] env = envelope_arr
    cdef long long[::1] stop = stop_arr
    with nogil:
        for i in range(n):
            run = rewards[i, m - 1]
            env[i, m - 1] = run
            for l in range(m - 2, -1, -1):
                if rewards[i, l] > run:
                    run = rewards[i, l]
                env[i, l] = run
            stop[i] = m - 1
            for l in range(m):
                if env[i, l] <= rewards[i, l] + tie_tol:
                    stop[i] = l
                    break
    return envelope_arr, stop_arr


def first_gain_stop(const double[:, ::1] utilities, double cost):
    cdef Py_ssize_t n = utilities.shape[0]
    cdef Py_ssize_t m = utilities.shape[1]
    cdef Py_ssize_t i, l
    if m < 2:
        raise ValueError("need at least two utility columns (h_0 and h_1)")
    stop_arr = np.empty(n, dtype=np.int64)
    cdef long long[::1] stop = stop_arr
    with nogil:
        for i in range(n):
            stop[i] = m - 1
            for l in range(m - 2):
                if utilities[i, l + 1] - utilities[i, l] <= cost:
                    stop[i] = l + 1
                    break
    return stop_arr


def hjb_sweep(double h_lo, double dh, const double[:, ::1] feet,
              const double[::1] terminal, double step_cost):
    cdef Py_ssize_t n_t = feet.shape[0]
    cdef Py_ssize_t n_h = feet.shape[1]
    cdef Py_ssize_t i, k, j
    cdef double x, w, cont, g
    value_arr = np.empty((n_t + 1, n_h), dtype=np.float64)
    stop_arr = np.empty((n_t + 1, n_h), dtype=np.uint8)
    cdef double[:, ::1] V = value_arr
    cdef unsigned char[:, ::1] S = stop_arr
    with nogil:
        for k in range(n_h):
            V[n_t, k] = terminal[k]
            S[n_t, k] = 1
        for i in range(n_t - 1, -1, -1):
            for k in range(n_h):
                x = (feet[i, k] - h_lo) / dh
                j = <Py_ssize_t>floor(x)
                if j < 0:
                    j = 0
                elif j > n_h - 2:
                    j = n_h - 2
                w = x - j
                cont = V[i + 1, j] + w * (V[i + 1, j + 1] - V[i + 1, j]) - step_cost
                g = terminal[k]
                if g >= cont:
                    V[i, k] = g
                    S[i, k] = 1
                else:
                    V[i, k] = cont
                    S[i, k] = 0
    return value_arr, stop_arr
