# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled patch gather/scatter for 3x3 "same" convolutions.

Same contracts as ``_kernels_py``; zero padding is fused into the loops so
no padded copy of the input is materialised.
"""
import numpy as np

ctypedef fused real:
    float
    double


def _im2col(real[:, :, ::1] x, real[:, ::1] out):
    cdef Py_ssize_t C = x.shape[0], H = x.shape[1], W = x.shape[2]
    cdef Py_ssize_t c, ky, kx, h, w, sh, row, w0, w1
    cdef real* op
    cdef const real* xp
    with nogil:
        for c in range(C):
            for ky in range(3):
                for kx in range(3):
                    row = c * 9 + ky * 3 + kx
                    w0 = 1 if kx == 0 else 0
                    w1 = W - 1 if kx == 2 else W
                    for h in range(H):
                        op = &out[row, h * W]
                        sh = h + ky - 1
                        if sh < 0 or sh >= H:
                            for w in range(W):
                                op[w] = 0
                            continue
                        xp = &x[c, sh, 0]
                        if w0:
                            op[0] = 0
                        for w in range(w0, w1):
                            op[w] = xp[w + kx - 1]
                        if w1 < W:
                            op[W - 1] = 0


def _col2im(real[:, ::1] cols, real[:, :, ::1] out):
    cdef Py_ssize_t C = out.shape[0], H = out.shape[1], W = out.shape[2]
    cdef Py_ssize_t c, ky, kx, h, w, sh, row, w0, w1
    cdef const real* cp
    cdef real* op
    with nogil:
        for c in range(C):
            for ky in range(3):
                for kx in range(3):
                    row = c * 9 + ky * 3 + kx
                    w0 = 1 if kx == 0 else 0
                    w1 = W - 1 if kx == 2 else W
                    for h in range(H):
                        sh = h + ky - 1
                        if sh < 0 or sh >= H:
                            continue
                        cp = &cols[row, h * W]
                        op = &out[c, sh, 0]
                        for w in range(w0, w1):
                            op[w + kx - 1] += cp[w]


def im2col3x3(x, out=None):
    x = np.ascontiguousarray(x)
    c, h, w = x.shape
    if out is None:
        out = np.empty((c * 9, h * w), dtype=x.dtype)
    _im2col(x, out)
    return out


def col2im3x3(cols, shape):
    cols = np.ascontiguousarray(cols)
    out = np.zeros(shape, dtype=cols.dtype)
    _col2im(cols, out)
    return out
