# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled candidate-selection kernel.

Arithmetic (operation order, rounding, tie handling) mirrors
``vpprecode.kernels._numpy.demap_select`` exactly so the two backends are
bit-for-bit interchangeable.  Keep the two in sync; the parity tests enforce
it.
"""

import numpy as np

from libc.math cimport rint


def demap_select(rtilde, ytilde, ranks, tau, bound, acc_step=0.0, acc_max=0.0):
    """Compiled twin of :func:`vpprecode.kernels._numpy.demap_select`."""
    rtilde = np.ascontiguousarray(rtilde, dtype=np.complex128)
    ytilde = np.ascontiguousarray(ytilde, dtype=np.complex128)
    ranks = np.ascontiguousarray(ranks, dtype=np.int64)
    cdef Py_ssize_t n = rtilde.shape[0]
    cdef Py_ssize_t n_cand = ranks.shape[0]
    cdef Py_ssize_t m = ytilde.shape[1]
    if rtilde.shape[1] != n or ytilde.shape[0] != n or ranks.shape[1] != n:
        raise ValueError("inconsistent kernel operand shapes")
    if n_cand < 1:
        raise ValueError("empty candidate set")
    cdef int b = int(bound)
    if b < 1:
        raise ValueError("bound must be >= 1")
    cdef Py_ssize_t nb = (2 * b + 1) ** 2
    if ranks.min() < 1 or ranks.max() > nb:
        raise ValueError(f"ranks must lie in 1..{nb}")

    span = np.arange(-b, b + 1, dtype=float)
    re, im = np.meshgrid(span, span, indexing="ij")
    lat_np = np.ascontiguousarray((re + 1j * im).ravel())

    t_out = np.zeros((n, m), dtype=np.complex128)
    d_out = np.empty(m, dtype=np.float64)
    c_out = np.empty(m, dtype=np.int64)

    cdef double complex[:, ::1] rt = rtilde
    cdef double complex[:, ::1] yt = ytilde
    cdef long long[:, ::1] rk = ranks
    cdef double complex[::1] lat = lat_np
    cdef double complex[:, ::1] tb = t_out
    cdef double[::1] db = d_out
    cdef long long[::1] cb = c_out

    work_t = np.zeros(n, dtype=np.complex128)
    work_d = np.zeros(nb, dtype=np.float64)
    work_o = np.zeros(nb, dtype=np.int64)
    best_t = np.zeros(n, dtype=np.complex128)
    cdef double complex[::1] tcur = work_t
    cdef double[::1] dist = work_d
    cdef long long[::1] order = work_o
    cdef double complex[::1] tbest = best_t

    cdef double step = float(acc_step)
    cdef double mx = float(acc_max)
    cdef bint quant = step > 0.0
    cdef double tau_c = float(tau)

    cdef Py_ssize_t j, c, k, l, a, p, key, cbest, bsel
    cdef double complex acc, w, u, tval
    cdef double d, kd, dbest
    cdef long long nsat = 0

    for j in range(m):
        dbest = 0.0
        cbest = -1
        for c in range(n_cand):
            d = 0.0
            for k in range(n - 1, -1, -1):
                acc = yt[k, j]
                for l in range(k + 1, n):
                    acc = acc - rt[k, l] * (tau_c * tcur[l])
                w = tau_c * rt[k, k]
                for a in range(nb):
                    u = acc - w * lat[a]
                    dist[a] = u.real * u.real + u.imag * u.imag
                    order[a] = a
                # stable insertion sort: ties keep (real, imag) base order
                for a in range(1, nb):
                    key = order[a]
                    kd = dist[key]
                    p = a - 1
                    while p >= 0 and dist[order[p]] > kd:
                        order[p + 1] = order[p]
                        p -= 1
                    order[p + 1] = key
                bsel = order[rk[c, k] - 1]
                tval = lat[bsel]
                tcur[k] = tval
                u = acc - w * tval
                d = d + (u.real * u.real + u.imag * u.imag)
                if quant:
                    d = rint(d / step) * step
                    if d > mx:
                        d = mx
                        nsat += 1
                    elif d < -mx:
                        d = -mx
                        nsat += 1
            if cbest < 0 or d < dbest:
                dbest = d
                cbest = c
                for k in range(n):
                    tbest[k] = tcur[k]
        db[j] = dbest
        cb[j] = cbest
        for k in range(n):
            tb[k, j] = tbest[k]

    return t_out, d_out, c_out, int(nsat)
