# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled mollifier hot loops; same contract as ``_pykernels``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, sqrt

cnp.import_array()


cdef inline double _radial(double r2, int code, double c) nogil:
    cdef double s = 0.25 - r2
    if s <= 0.0:
        return 0.0
    if code == 0:
        return c * exp(-1.0 / s)
    return c * s * s


def slice_mass(b, rho, int code, double c, gx, gw):
    """Mass of the chord ``{(sigma, rho): -a <= sigma <= min(b, a)}`` (see the Python backend)."""
    cdef double[:, ::1] bv = np.ascontiguousarray(b, dtype=np.float64)
    cdef double[::1] rv = np.ascontiguousarray(rho, dtype=np.float64)
    cdef double[::1] xv = np.ascontiguousarray(gx, dtype=np.float64)
    cdef double[::1] wv = np.ascontiguousarray(gw, dtype=np.float64)
    cdef Py_ssize_t P = bv.shape[0], Q = bv.shape[1], m = xv.shape[0]
    out = np.zeros((P, Q))
    cdef double[:, ::1] ov = out
    cdef Py_ssize_t i, q, k
    cdef double a, hi, half, mid, sig, acc, rho2
    with nogil:
        for q in range(Q):
            rho2 = rv[q] * rv[q]
            if rho2 >= 0.25:
                continue
            a = sqrt(0.25 - rho2)
            for i in range(P):
                hi = bv[i, q]
                if hi > a:
                    hi = a
                if hi <= -a:
                    continue
                half = 0.5 * (hi + a)
                mid = -a + half
                acc = 0.0
                for k in range(m):
                    sig = mid + half * xv[k]
                    acc = acc + wv[k] * _radial(sig * sig + rho2, code, c)
                ov[i, q] = half * acc
    return out
