"""Numerical primitives: seeded RNG, 2-D DFT, softmax and 3x3 convolution.

Tensors are plain ``numpy.ndarray`` objects. Model state is float32;
reductions that feed acceptance checks (powers, losses) accumulate in float64.
"""
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import DimensionError, ParameterError

RNG_ALGORITHM = "PCG64/SeedSequence + Box-Muller(53-bit uniforms)"

_TWO_NEG53 = 1.0 / 9007199254740992.0


class Rng:
    """Seeded generator with independent sub-streams.

    The bit stream is numpy's PCG64 seeded through ``SeedSequence(seed,
    spawn_key=(stream,))``. Uniforms are built from the top 53 bits of each
    raw 64-bit draw and normals use Box-Muller, so the scalar stream only
    depends on PCG64 itself and is identical on every platform.
    """

    def __init__(self, seed, stream=0):
        if seed < 0 or stream < 0:
            raise ParameterError("seed and stream id must be non-negative")
        self.seed = int(seed)
        self.stream = int(stream)
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream,))
        self._bits = np.random.PCG64(ss)
        self._gen = np.random.Generator(self._bits)

    def child(self, stream):
        """Independent generator for ``(seed, stream)``; does not consume state."""
        return Rng(self.seed, stream)

    def uniform(self, shape):
        """Uniform samples in the open interval (0, 1), float64."""
        n = int(np.prod(shape, dtype=np.int64))
        raw = self._bits.random_raw(n) if n else np.zeros(0, dtype=np.uint64)
        u = ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * _TWO_NEG53
        return u.reshape(shape)

    def normal(self, shape):
        """Standard normal samples (float64) via Box-Muller."""
        shape = tuple(shape) if np.ndim(shape) else (int(shape),)
        n = int(np.prod(shape, dtype=np.int64))
        m = (n + 1) // 2
        u = self.uniform((2, m))
        r = np.sqrt(-2.0 * np.log(u[0]))
        theta = 2.0 * np.pi * u[1]
        z = np.empty(2 * m)
        z[0::2] = r * np.cos(theta)
        z[1::2] = r * np.sin(theta)
        return z[:n].reshape(shape)

    def gamma(self, shape_k, scale, size):
        return self._gen.gamma(shape_k, scale, size)

    def integers(self, low, high, size=None):
        return self._gen.integers(low, high, size)

    def permutation(self, n):
        return self._gen.permutation(n)


def gaussian(rng, shape, dtype=np.float32):
    """i.i.d. standard normal tensor drawn from ``rng``."""
    if len(tuple(shape)) == 0:
        raise DimensionError("shape must be non-empty")
    return rng.normal(shape).astype(dtype)


@dataclass(frozen=True)
class Spectrum:
    """Complex 2-D DFT coefficients stored as separate real/imag planes."""

    re: np.ndarray
    im: np.ndarray

    @property
    def shape(self):
        return self.re.shape

    def power(self):
        return self.re * self.re + self.im * self.im


def _dft_matrix(n):
    k = np.arange(n)
    ang = -2.0 * np.pi * np.outer(k, k) / n
    return np.cos(ang), np.sin(ang)


def _check_2d(field):
    field = np.asarray(field)
    if field.ndim != 2:
        raise DimensionError(f"expected a 2-D field, got shape {field.shape}")
    return field.astype(np.float64)


def dft2(field):
    """Exact 2-D DFT ``F(u,v) = sum_{h,w} x(h,w) exp(-2 pi i (uh/H + vw/W))``.

    Evaluated separably as ``A x B`` with explicit DFT matrices in float64.
    """
    x = _check_2d(field)
    hr, hi = _dft_matrix(x.shape[0])
    wr, wi = _dft_matrix(x.shape[1])
    # (hr + i hi) x (wr + i wi)
    ar, ai = hr @ x, hi @ x
    return Spectrum(re=ar @ wr - ai @ wi, im=ar @ wi + ai @ wr)


def idft2(spec):
    """Inverse of :func:`dft2`; returns the real part."""
    h, w = spec.shape
    hr, hi = _dft_matrix(h)
    wr, wi = _dft_matrix(w)
    # conjugate matrices give the inverse kernel
    ar = hr @ spec.re + hi @ spec.im
    ai = hr @ spec.im - hi @ spec.re
    return (ar @ wr + ai @ wi) / (h * w)


def mean_power(field):
    """Mean over all frequency bins of ``|F(u,v)|^2``.

    By Parseval this equals ``sum(x**2)`` of the spatial field.
    """
    spec = dft2(field)
    return float(np.mean(spec.power()))


def softmax(logits, temperature=1.0, axis=0):
    """Temperature softmax along ``axis`` (channel axis by default)."""
    if not temperature > 0:
        raise ParameterError(f"temperature must be > 0, got {temperature}")
    z = np.asarray(logits) / temperature
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(logits, temperature=1.0, axis=0):
    if not temperature > 0:
        raise ParameterError(f"temperature must be > 0, got {temperature}")
    z = np.asarray(logits) / temperature
    z = z - z.max(axis=axis, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))


def conv3x3_batch(x, kernels_, bias):
    """Batched "same" 3x3 cross-correlation on N x C_in x H x W.

    Each sample is lowered to one GEMM against its patch matrix, which keeps
    the working set cache-sized. Returns ``(out, cols)``; ``cols`` (N x
    C_in*9 x H*W) is what the backward pass needs.
    """
    n, cin, h, w = x.shape
    cout = kernels_.shape[0]
    if kernels_.shape[1] != cin:
        raise DimensionError(f"kernel expects {kernels_.shape[1]} input channels, got {cin}")
    wmat = kernels_.reshape(cout, -1)
    cols = np.empty((n, cin * 9, h * w), dtype=x.dtype)
    out = np.empty((n, cout, h * w), dtype=x.dtype)
    for i in range(n):
        kernels.im2col3x3(x[i], cols[i])
        np.matmul(wmat, cols[i], out=out[i])
    out += bias[None, :, None]
    return out.reshape(n, cout, h, w), cols


def conv3x3_batch_backward(dout, kernels_, cols):
    """Gradients ``(dx, dkernels, dbias)`` of :func:`conv3x3_batch`."""
    n, cout, h, w = dout.shape
    cin = kernels_.shape[1]
    wmat = kernels_.reshape(cout, -1)
    d3 = dout.reshape(n, cout, h * w)
    dk = np.zeros_like(wmat)
    dx = np.empty((n, cin, h, w), dtype=dout.dtype)
    for i in range(n):
        dk += d3[i] @ cols[i].T
        dx[i] = kernels.col2im3x3(wmat.T @ d3[i], (cin, h, w))
    db = d3.sum(axis=(0, 2))
    return dx, dk.reshape(kernels_.shape), db


def conv2d(inp, kernels_, bias):
    """Single-sample 3x3 convolution, stride 1, zero padding 1.

    ``inp`` is C_in x H x W, ``kernels_`` C_out x C_in x 3 x 3, ``bias`` C_out.
    """
    inp = np.asarray(inp)
    kernels_ = np.asarray(kernels_)
    if inp.ndim != 3:
        raise DimensionError(f"conv2d input must be C x H x W, got {inp.shape}")
    if kernels_.ndim != 4 or kernels_.shape[2:] != (3, 3):
        raise DimensionError(f"kernels must be C_out x C_in x 3 x 3, got {kernels_.shape}")
    if np.shape(bias) != (kernels_.shape[0],):
        raise DimensionError("bias length must equal C_out")
    dtype = np.result_type(inp, kernels_)
    x = np.ascontiguousarray(inp[None], dtype=dtype)
    out, _ = conv3x3_batch(x, kernels_.astype(dtype), np.asarray(bias, dtype=dtype))
    return out[0]
