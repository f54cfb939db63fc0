# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled unfold/fold kernels for strided, padded, dilated 2-D convolution.

Column layout matches ``_kernels_py``: row index ``(c * kh + a) * kw + e``,
column index ``t * wo + f``.
"""
import numpy as np


def im2col(const double[:, :, :, ::1] x, int kh, int kw, int sh, int sw,
           int ph, int pw, int dh, int dw, int ho, int wo):
    cdef Py_ssize_t nb = x.shape[0], nc = x.shape[1], h = x.shape[2], w = x.shape[3]
    out = np.zeros((nb, nc * kh * kw, ho * wo), dtype=np.float64)
    cdef double[:, :, ::1] o = out
    cdef Py_ssize_t b, c, a, e, t, f, row, ti, fi, base
    with nogil:
        for b in range(nb):
            for c in range(nc):
                for a in range(kh):
                    for e in range(kw):
                        row = (c * kh + a) * kw + e
                        for t in range(ho):
                            ti = t * sh - ph + a * dh
                            if ti < 0 or ti >= h:
                                continue
                            base = t * wo
                            for f in range(wo):
                                fi = f * sw - pw + e * dw
                                if fi >= 0 and fi < w:
                                    o[b, row, base + f] = x[b, c, ti, fi]
    return out


def col2im(const double[:, :, ::1] cols, int nc, int h, int w, int kh, int kw,
           int sh, int sw, int ph, int pw, int dh, int dw, int ho, int wo):
    cdef Py_ssize_t nb = cols.shape[0]
    out = np.zeros((nb, nc, h, w), dtype=np.float64)
    cdef double[:, :, :, ::1] o = out
    cdef Py_ssize_t b, c, a, e, t, f, row, ti, fi, base
    with nogil:
        for b in range(nb):
            for c in range(nc):
                for a in range(kh):
                    for e in range(kw):
                        row = (c * kh + a) * kw + e
                        for t in range(ho):
                            ti = t * sh - ph + a * dh
                            if ti < 0 or ti >= h:
                                continue
                            base = t * wo
                            for f in range(wo):
                                fi = f * sw - pw + e * dw
                                if fi >= 0 and fi < w:
                                    o[b, c, ti, fi] += cols[b, row, base + f]
    return out
