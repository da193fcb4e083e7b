"""Small convolutional encoder-decoder with hand-written reverse mode.

Shared by the joint denoiser (timestep-conditioned) and the student
segmentation network (unconditioned). Topology::

    stem conv (in -> W)
    2 x residual block @ W           -- output kept as skip
    2x avg-pool, conv (W -> 2W)
    2 x residual block @ 2W
    2x nearest upsample, conv (2W -> W), + skip
    2 x residual block @ W
    SiLU, head conv (W -> out)

A residual block is ``x + conv2(silu(conv1(silu(x)) + tbias))`` where
``tbias`` is a learned linear projection of the sinusoidal timestep
embedding (absent for the student).

All methods take and return N x C x H x W batches.
"""
import math
from dataclasses import asdict, dataclass

import numpy as np

from . import kernels
from .errors import DimensionError, ParameterError, TrainingDivergence
from .numerics import conv3x3_batch, conv3x3_batch_backward

BLOCKS = ("r1a", "r1b", "r2a", "r2b", "r3a", "r3b")


@dataclass(frozen=True)
class NetConfig:
    in_ch: int
    out_ch: int
    width: int = 16
    emb_dim: int = 32
    time_cond: bool = True

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: d[k] for k in ("in_ch", "out_ch", "width", "emb_dim", "time_cond")})


def timestep_embedding(t, dim):
    """Sinusoidal embedding, shape (N, dim): ``[sin(t f_k), cos(t f_k)]``."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / half)
    args = t[:, None] * freqs[None, :]
    emb = np.concatenate([np.sin(args), np.cos(args)], axis=1)
    if dim % 2:
        emb = np.concatenate([emb, np.zeros((len(t), 1))], axis=1)
    return emb


def _block_channels(cfg):
    w = cfg.width
    return {"r1a": w, "r1b": w, "r2a": 2 * w, "r2b": 2 * w, "r3a": w, "r3b": w}


def param_shapes(cfg):
    """Ordered mapping of parameter name to shape; a pure function of cfg."""
    w = cfg.width
    shapes = {
        "stem.w": (w, cfg.in_ch, 3, 3),
        "stem.b": (w,),
    }
    chans = _block_channels(cfg)
    for name in BLOCKS[:2]:
        shapes.update(_block_shapes(name, chans[name], cfg))
    shapes["down.w"] = (2 * w, w, 3, 3)
    shapes["down.b"] = (2 * w,)
    for name in BLOCKS[2:4]:
        shapes.update(_block_shapes(name, chans[name], cfg))
    shapes["up.w"] = (w, 2 * w, 3, 3)
    shapes["up.b"] = (w,)
    for name in BLOCKS[4:]:
        shapes.update(_block_shapes(name, chans[name], cfg))
    shapes["head.w"] = (cfg.out_ch, w, 3, 3)
    shapes["head.b"] = (cfg.out_ch,)
    return shapes


def _block_shapes(name, ch, cfg):
    s = {
        f"{name}.c1.w": (ch, ch, 3, 3),
        f"{name}.c1.b": (ch,),
        f"{name}.c2.w": (ch, ch, 3, 3),
        f"{name}.c2.b": (ch,),
    }
    if cfg.time_cond:
        s[f"{name}.t.w"] = (ch, cfg.emb_dim)
        s[f"{name}.t.b"] = (ch,)
    return s


def init_params(cfg, rng, zero_head=False, dtype=np.float32):
    """He-normal convolutions; residual second convs and head scaled down."""
    params = {}
    for name, shape in param_shapes(cfg).items():
        if name.endswith(".b"):
            params[name] = np.zeros(shape, dtype=dtype)
            continue
        if name.endswith(".t.w"):
            std = 1.0 / math.sqrt(shape[1])
        else:
            std = math.sqrt(2.0 / (shape[1] * 9))
            if ".c2." in name:
                std *= 0.5
            if name == "head.w":
                std *= 0.5
        params[name] = (rng.normal(shape) * std).astype(dtype)
    if zero_head:
        params["head.w"][...] = 0
        params["head.b"][...] = 0
    return params


def num_params(cfg):
    return sum(int(np.prod(s)) for s in param_shapes(cfg).values())


def _avgpool2(x):
    n, c, h, w = x.shape
    return x.reshape(n, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))


def _avgpool2_backward(d):
    return np.repeat(np.repeat(d, 2, axis=2), 2, axis=3) * 0.25


def _upsample2(x):
    return np.repeat(np.repeat(x, 2, axis=2), 2, axis=3)


def _upsample2_backward(d):
    n, c, h, w = d.shape
    return d.reshape(n, c, h // 2, 2, w // 2, 2).sum(axis=(3, 5))


class ConvNet:
    """Parameters plus forward/backward for one :class:`NetConfig`."""

    def __init__(self, cfg, params):
        self.cfg = cfg
        expected = param_shapes(cfg)
        if set(params) != set(expected):
            raise DimensionError("parameter names do not match the architecture")
        for k, s in expected.items():
            if tuple(params[k].shape) != s:
                raise DimensionError(f"parameter {k} has shape {params[k].shape}, expected {s}")
        self.params = params

    @classmethod
    def create(cls, cfg, rng, zero_head=False, dtype=np.float32):
        return cls(cfg, init_params(cfg, rng, zero_head=zero_head, dtype=dtype))

    @property
    def dtype(self):
        return self.params["stem.w"].dtype

    def astype(self, dtype):
        return ConvNet(self.cfg, {k: v.astype(dtype) for k, v in self.params.items()})

    # -- forward ---------------------------------------------------------

    def _conv(self, name, x):
        out, cols = conv3x3_batch(x, self.params[name + ".w"], self.params[name + ".b"])
        return out, (name, cols)

    def _block(self, name, x, temb):
        a0 = kernels.silu(x)
        h, c1 = self._conv(name + ".c1", a0)
        if temb is not None:
            tb = temb @ self.params[name + ".t.w"].T + self.params[name + ".t.b"]
            h = h + tb[:, :, None, None]
        a1 = kernels.silu(h)
        h2, c2 = self._conv(name + ".c2", a1)
        return x + h2, (x, h, c1, c2)

    def forward(self, x, t=None, keep_cache=False):
        """Run the network on an N x in_ch x H x W batch.

        ``t`` (scalar or length-N) is required when the net is
        timestep-conditioned. Returns N x out_ch x H x W, plus the cache
        for :meth:`backward` when ``keep_cache`` is set.
        """
        cfg = self.cfg
        x = np.asarray(x)
        if x.ndim != 4 or x.shape[1] != cfg.in_ch:
            raise DimensionError(f"expected N x {cfg.in_ch} x H x W input, got {x.shape}")
        n, _, hh, ww = x.shape
        if hh % 2 or ww % 2:
            raise DimensionError("spatial extents must be divisible by 2")
        temb = None
        if cfg.time_cond:
            if t is None:
                raise ParameterError("timestep required for a conditioned network")
            tt = np.broadcast_to(np.asarray(t), (n,))
            temb = timestep_embedding(tt, cfg.emb_dim).astype(self.dtype)
        xc = np.ascontiguousarray(x, dtype=self.dtype)

        cache = {"temb": temb}
        h, cache["stem"] = self._conv("stem", xc)
        h, cache["r1a"] = self._block("r1a", h, temb)
        h, cache["r1b"] = self._block("r1b", h, temb)
        skip = h
        p = _avgpool2(h)
        h, cache["down"] = self._conv("down", p)
        h, cache["r2a"] = self._block("r2a", h, temb)
        h, cache["r2b"] = self._block("r2b", h, temb)
        u = _upsample2(h)
        h, cache["up"] = self._conv("up", u)
        h = h + skip
        h, cache["r3a"] = self._block("r3a", h, temb)
        h, cache["r3b"] = self._block("r3b", h, temb)
        cache["pre_head"] = h
        a = kernels.silu(h)
        out, cache["head"] = self._conv("head", a)
        if keep_cache:
            return out, cache
        return out

    # -- backward --------------------------------------------------------

    def _conv_back(self, grads, cache, dout):
        name, cols = cache
        dx, dw, db = conv3x3_batch_backward(dout, self.params[name + ".w"], cols)
        grads[name + ".w"] = dw
        grads[name + ".b"] = db
        return dx

    def _block_back(self, grads, name, cache, dout, temb):
        x, h, c1, c2 = cache
        da1 = self._conv_back(grads, c2, dout)
        dh = kernels.silu_grad(h, da1)
        if temb is not None:
            dtb = dh.sum(axis=(2, 3))  # (N, ch)
            grads[name + ".t.w"] = dtb.T @ temb
            grads[name + ".t.b"] = dtb.sum(axis=0)
        da0 = self._conv_back(grads, c1, dh)
        return dout + kernels.silu_grad(x, da0)

    def backward(self, cache, dout):
        """Parameter gradients for upstream gradient ``dout`` (N x out_ch x H x W).

        Also returns the gradient with respect to the input batch.
        """
        grads = {}
        temb = cache["temb"]
        d = np.ascontiguousarray(dout, dtype=self.dtype)
        da = self._conv_back(grads, cache["head"], d)
        d = kernels.silu_grad(cache["pre_head"], da)
        d = self._block_back(grads, "r3b", cache["r3b"], d, temb)
        d = self._block_back(grads, "r3a", cache["r3a"], d, temb)
        dskip = d
        du = self._conv_back(grads, cache["up"], d)
        d = _upsample2_backward(du)
        d = self._block_back(grads, "r2b", cache["r2b"], d, temb)
        d = self._block_back(grads, "r2a", cache["r2a"], d, temb)
        dp = self._conv_back(grads, cache["down"], d)
        d = _avgpool2_backward(dp) + dskip
        d = self._block_back(grads, "r1b", cache["r1b"], d, temb)
        d = self._block_back(grads, "r1a", cache["r1a"], d, temb)
        dx = self._conv_back(grads, cache["stem"], d)
        return grads, dx


@dataclass
class AdamState:
    """AdamW optimiser state (decoupled weight decay)."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    step: int = 0
    m: dict = None
    v: dict = None

    def __post_init__(self):
        if not self.lr > 0:
            raise ParameterError("learning rate must be > 0")
        if self.m is None:
            self.m = {}
        if self.v is None:
            self.v = {}

    def hyper(self):
        return {k: getattr(self, k) for k in ("lr", "beta1", "beta2", "eps", "weight_decay", "step")}


def adam_step(params, grads, state):
    """One in-place AdamW update of ``params``; returns ``params``."""
    for k, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingDivergence(f"non-finite gradient for {k} at step {state.step + 1}")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for k, p in params.items():
        g = grads.get(k)
        if g is None:
            g = np.zeros_like(p)
        m = state.m.get(k)
        if m is None:
            m = state.m[k] = np.zeros_like(p)
            state.v[k] = np.zeros_like(p)
        v = state.v[k]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        if state.weight_decay:
            p *= 1.0 - state.lr * state.weight_decay
        p -= (state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)).astype(p.dtype)
    return params
