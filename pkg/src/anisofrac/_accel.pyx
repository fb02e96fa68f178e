# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled multilinear scatter and gather on dense grids (up to 4 axes)."""

import numpy as np
cimport numpy as cnp
from libc.math cimport floor

cnp.import_array()

DEF MAXDIM = 4


def scatter_multilinear(double[:, ::1] pts, double[::1] w, double[::1] out,
                        cnp.intp_t[::1] shape):
    """Add ``w[k]`` to ``out`` at the fractional index ``pts[k]``.

    ``out`` is a C-ordered flattening of an array of the given ``shape``;
    each weight is split over the 2^n surrounding nodes with multilinear
    hat weights.  Points whose cell leaves the array are skipped and their
    total weight is returned.
    """
    cdef Py_ssize_t N = pts.shape[0], n = pts.shape[1]
    cdef Py_ssize_t k, d, corner, flat
    cdef cnp.intp_t base[MAXDIM]
    cdef double frac[MAXDIM]
    cdef cnp.intp_t stride[MAXDIM]
    cdef double acc, lost = 0.0, t
    cdef int bit, ok
    if n > MAXDIM:
        raise ValueError("at most 4 axes")
    stride[n - 1] = 1
    for d in range(n - 2, -1, -1):
        stride[d] = stride[d + 1] * shape[d + 1]
    with nogil:
        for k in range(N):
            ok = 1
            for d in range(n):
                t = floor(pts[k, d])
                base[d] = <cnp.intp_t>t
                frac[d] = pts[k, d] - t
                if base[d] < 0 or base[d] + 1 >= shape[d]:
                    if not (base[d] == shape[d] - 1 and frac[d] == 0.0):
                        ok = 0
            if not ok:
                lost += w[k]
                continue
            for corner in range(1 << n):
                acc = w[k]
                flat = 0
                for d in range(n):
                    bit = (corner >> d) & 1
                    if bit:
                        acc *= frac[d]
                    else:
                        acc *= 1.0 - frac[d]
                    flat += (base[d] + bit) * stride[d]
                if acc != 0.0:
                    out[flat] += acc
    return lost


def interp_multilinear(double[::1] values, cnp.intp_t[::1] shape,
                       double[:, ::1] pts):
    """Multilinear interpolation at fractional indices, clamped to the array."""
    cdef Py_ssize_t N = pts.shape[0], n = pts.shape[1]
    cdef Py_ssize_t k, d, corner, flat
    cdef cnp.intp_t base[MAXDIM]
    cdef double frac[MAXDIM]
    cdef cnp.intp_t stride[MAXDIM]
    cdef double acc, s, t
    cdef int bit
    res = np.empty(N, dtype=np.float64)
    cdef double[::1] r = res
    if n > MAXDIM:
        raise ValueError("at most 4 axes")
    stride[n - 1] = 1
    for d in range(n - 2, -1, -1):
        stride[d] = stride[d + 1] * shape[d + 1]
    with nogil:
        for k in range(N):
            for d in range(n):
                t = pts[k, d]
                if t < 0.0:
                    t = 0.0
                if t > shape[d] - 1:
                    t = shape[d] - 1
                base[d] = <cnp.intp_t>floor(t)
                if base[d] >= shape[d] - 1:
                    base[d] = shape[d] - 2 if shape[d] > 1 else 0
                frac[d] = t - base[d]
            s = 0.0
            for corner in range(1 << n):
                acc = 1.0
                flat = 0
                for d in range(n):
                    bit = (corner >> d) & 1
                    if shape[d] == 1:
                        if bit:
                            acc = 0.0
                        continue
                    if bit:
                        acc *= frac[d]
                    else:
                        acc *= 1.0 - frac[d]
                    flat += (base[d] + bit) * stride[d]
                if acc != 0.0:
                    s += acc * values[flat]
            r[k] = s
    return res
