# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot loops: small batched Cholesky solves for the chaos
quadrature, and increment power sums for the structure functions."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, log, fabs, pow, NAN

cnp.import_array()


def chol_solve_batch(A, g):
    cdef double[:, :, ::1] a = np.ascontiguousarray(A, dtype=np.float64)
    cdef double[:, :, ::1] rhs = np.ascontiguousarray(g, dtype=np.float64)
    cdef Py_ssize_t nb = a.shape[0], k = a.shape[1], d = rhs.shape[2]
    z_arr = np.zeros((nb, k, d))
    ld_arr = np.empty(nb)
    cdef double[:, :, ::1] z = z_arr
    cdef double[::1] logdet = ld_arr
    cdef double[:, ::1] L = np.zeros((k, k))
    cdef Py_ssize_t b, i, j, m, c
    cdef double s, ld
    cdef bint ok
    with nogil:
        for b in range(nb):
            ok = True
            ld = 0.0
            for j in range(k):
                s = a[b, j, j]
                for m in range(j):
                    s -= L[j, m] * L[j, m]
                if s <= 0.0:
                    ok = False
                    break
                L[j, j] = sqrt(s)
                ld += log(s)
                for i in range(j + 1, k):
                    s = a[b, i, j]
                    for m in range(j):
                        s -= L[i, m] * L[j, m]
                    L[i, j] = s / L[j, j]
            if not ok:
                logdet[b] = NAN
                continue
            logdet[b] = ld
            # back substitution L^T z = rhs
            for c in range(d):
                for i in range(k - 1, -1, -1):
                    s = rhs[b, i, c]
                    for m in range(i + 1, k):
                        s -= L[m, i] * z[b, m, c]
                    z[b, i, c] = s / L[i, i]
    return z_arr, ld_arr


def increment_power_sums(a, b, Py_ssize_t shift, double p, Py_ssize_t lo, Py_ssize_t hi):
    cdef double[:, ::1] av = np.ascontiguousarray(a, dtype=np.float64)
    cdef double[:, ::1] bv
    cdef bint has_b = b is not None
    if has_b:
        bv = np.ascontiguousarray(b, dtype=np.float64)
    else:
        bv = av
    cdef Py_ssize_t nr = av.shape[0], n = av.shape[1], r, x, xs
    out_arr = np.zeros(nr)
    cdef double[::1] out = out_arr
    cdef double dv, acc
    cdef int ip = -1
    if p == 2.0:
        ip = 2
    elif p == 4.0:
        ip = 4
    with nogil:
        for r in range(nr):
            acc = 0.0
            for x in range(lo, hi):
                xs = (x + shift) % n
                if shift != 0:
                    dv = av[r, xs] - av[r, x]
                    if has_b:
                        dv = dv - (bv[r, xs] - bv[r, x])
                else:
                    dv = av[r, x] - bv[r, x]
                if ip == 2:
                    acc += dv * dv
                elif ip == 4:
                    dv = dv * dv
                    acc += dv * dv
                else:
                    acc += pow(fabs(dv), p)
            out[r] = acc
    return out_arr
