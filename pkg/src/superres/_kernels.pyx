# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled loop kernels: AR(1) noise recursion and batched SU(2) chains."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, sin, cos

cnp.import_array()


def ou_recursion(xi, double rho, double sd):
    cdef cnp.ndarray[double, ndim=2] x = np.array(np.atleast_2d(xi), dtype=np.float64, order="C")
    cdef Py_ssize_t n = x.shape[0], m = x.shape[1], i, k
    cdef double q = sd * sqrt(1.0 - rho * rho)
    cdef double prev
    for i in range(n):
        prev = sd * x[i, 0]
        x[i, 0] = prev
        for k in range(1, m):
            prev = rho * prev + q * x[i, k]
            x[i, k] = prev
    return x.reshape(np.shape(xi))


def su2_survival(za, xb):
    cdef cnp.ndarray[double, ndim=2] a = np.ascontiguousarray(za, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1] b = np.ascontiguousarray(xb, dtype=np.float64)
    cdef Py_ssize_t n = a.shape[0], m = a.shape[1], i, k
    cdef cnp.ndarray[double, ndim=1] out = np.empty(n)
    cdef double s = 1.0 / sqrt(2.0)
    cdef double r0, i0, r1, i1, nr0, ni0, nr1, ni1, az, bx, r, c, sr, sa, sb
    for i in range(n):
        r0 = s; i0 = 0.0; r1 = s; i1 = 0.0
        for k in range(m):
            az = a[i, k]
            bx = b[k]
            r = sqrt(az * az + bx * bx)
            c = cos(r)
            sr = sin(r) / r if r > 0 else 1.0
            sa = sr * az
            sb = sr * bx
            # p0' = (c - i sa) p0 - i sb p1 ; p1' = -i sb p0 + (c + i sa) p1
            nr0 = c * r0 + sa * i0 + sb * i1
            ni0 = c * i0 - sa * r0 - sb * r1
            nr1 = sb * i0 + c * r1 - sa * i1
            ni1 = -sb * r0 + c * i1 + sa * r1
            r0 = nr0; i0 = ni0; r1 = nr1; i1 = ni1
        nr0 = (r0 + r1) * s
        ni0 = (i0 + i1) * s
        out[i] = nr0 * nr0 + ni0 * ni0
    return out
