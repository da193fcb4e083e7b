"""Pure numpy implementations of the hot convolution kernels.

A 3x3 "same" convolution of one C x H x W sample is a GEMM between the
C_out x (C_in * 9) kernel matrix and the (C_in * 9) x (H * W) patch matrix
built here.
"""
import numpy as np


def im2col3x3(x, out=None):
    """Gather zero-padded 3x3 patches of a C x H x W sample.

    Row ``c * 9 + ky * 3 + kx`` of the result holds input channel ``c``
    shifted by ``(ky - 1, kx - 1)``.
    """
    c, h, w = x.shape
    xp = np.zeros((c, h + 2, w + 2), dtype=x.dtype)
    xp[:, 1:-1, 1:-1] = x
    if out is None:
        out = np.empty((c * 9, h * w), dtype=x.dtype)
    cols = out.reshape(c, 3, 3, h, w)
    for ky in range(3):
        for kx in range(3):
            cols[:, ky, kx] = xp[:, ky:ky + h, kx:kx + w]
    return out


def col2im3x3(cols, shape):
    """Adjoint of :func:`im2col3x3`: scatter-add patch rows back to C x H x W."""
    c, h, w = shape
    cols = cols.reshape(c, 3, 3, h, w)
    xp = np.zeros((c, h + 2, w + 2), dtype=cols.dtype)
    for ky in range(3):
        for kx in range(3):
            xp[:, ky:ky + h, kx:kx + w] += cols[:, ky, kx]
    return np.ascontiguousarray(xp[:, 1:-1, 1:-1])


def silu(x):
    return x / (1.0 + np.exp(-x))


def silu_grad(x, dout):
    """Backward of SiLU given its pre-activation input."""
    s = 1.0 / (1.0 + np.exp(-x))
    return dout * (s * (1.0 + x * (1.0 - s)))
