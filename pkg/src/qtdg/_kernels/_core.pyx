# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Cython monomial table kernels (compiled backend).

Same contracts as qtdg._kernels._py; selected at import by qtdg._kernels.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def monomial_values(double[:, ::1] scaled, long long[::1] parent,
                    long long[::1] axis):
    cdef Py_ssize_t n = scaled.shape[0]
    cdef Py_ssize_t m = parent.shape[0]
    vals_arr = np.empty((n, m), dtype=np.float64)
    cdef double[:, ::1] vals = vals_arr
    cdef Py_ssize_t i, t
    for i in range(n):
        vals[i, 0] = 1.0
        for t in range(1, m):
            vals[i, t] = vals[i, parent[t]] * scaled[i, axis[t]]
    return vals_arr


def monomial_tables(double[:, ::1] scaled, long long[::1] parent,
                    long long[::1] axis, long long[:, ::1] down,
                    double[:, ::1] kval):
    cdef Py_ssize_t n = scaled.shape[0]
    cdef Py_ssize_t d = scaled.shape[1]
    cdef Py_ssize_t m = parent.shape[0]
    vals_arr = np.empty((n, m), dtype=np.float64)
    derivs_arr = np.zeros((n, m, d), dtype=np.float64)
    cdef double[:, ::1] vals = vals_arr
    cdef double[:, :, ::1] derivs = derivs_arr
    cdef Py_ssize_t i, t, a
    cdef long long src
    for i in range(n):
        vals[i, 0] = 1.0
        for t in range(1, m):
            vals[i, t] = vals[i, parent[t]] * scaled[i, axis[t]]
        for t in range(1, m):
            for a in range(d):
                src = down[t, a]
                if src >= 0:
                    derivs[i, t, a] = kval[t, a] * vals[i, src]
    return vals_arr, derivs_arr
