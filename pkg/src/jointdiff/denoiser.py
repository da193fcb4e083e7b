"""Joint denoiser: (noisy image, noisy scaled mask, t) -> (clean image, logits).

The network predicts the clean image directly (x0-parameterisation) in
output channel 0 and unnormalised class logits in channels 1..C.
"""
import numpy as np

from .errors import DimensionError
from .nn import ConvNet, NetConfig
from .tensorio import load_checkpoint, save_checkpoint


class Denoiser:
    def __init__(self, net, num_classes):
        if net.cfg.in_ch != 1 + num_classes or net.cfg.out_ch != 1 + num_classes:
            raise DimensionError("denoiser net must map 1+C channels to 1+C channels")
        if not net.cfg.time_cond:
            raise DimensionError("denoiser net must be timestep-conditioned")
        self.net = net
        self.num_classes = num_classes

    @classmethod
    def create(cls, num_classes, rng, width=16, emb_dim=32, zero_head=False, dtype=np.float32):
        cfg = NetConfig(1 + num_classes, 1 + num_classes, width=width, emb_dim=emb_dim, time_cond=True)
        return cls(ConvNet.create(cfg, rng, zero_head=zero_head, dtype=dtype), num_classes)

    @property
    def params(self):
        return self.net.params

    def predict(self, x_t, y_t, t):
        """Batched prediction: ``x_t`` N x 1 x H x W, ``y_t`` N x C x H x W."""
        stack = np.concatenate([x_t, y_t], axis=1)
        out = self.net.forward(stack, t)
        return out[:, :1], out[:, 1:]

    def __call__(self, x_t, y_t, t):
        return self.predict(x_t, y_t, t)

    def save(self, path, **extra):
        header = {"kind": "denoiser", "arch": self.net.cfg.to_dict(), "num_classes": self.num_classes}
        header.update(extra)
        save_checkpoint(path, self.params, header)

    @classmethod
    def load(cls, path):
        params, header = load_checkpoint(path)
        if header.get("kind") != "denoiser":
            raise DimensionError(f"{path} is not a denoiser checkpoint")
        cfg = NetConfig.from_dict(header["arch"])
        return cls(ConvNet(cfg, params), header["num_classes"]), header


def _check_stack(model, stack):
    stack = np.asarray(stack)
    if stack.ndim != 3 or stack.shape[0] != 1 + model.num_classes:
        raise DimensionError(f"stack must be (1+C) x H x W, got {stack.shape}")
    return stack


def denoiser_forward(model, stack, t, sched=None):
    """Single-sample forward on a (1+C) x H x W stack; returns (x_hat, y_hat)."""
    stack = _check_stack(model, stack)
    if sched is not None:
        sched.check_t(t)
    out = model.net.forward(stack[None], t)[0]
    return out[:1], out[1:]


def denoiser_backward(model, stack, t, sched, grad_x, grad_y):
    """Parameter gradients of ``<grad_x, x_hat> + <grad_y, y_hat>``."""
    stack = _check_stack(model, stack)
    if sched is not None:
        sched.check_t(t)
    _, cache = model.net.forward(stack[None], t, keep_cache=True)
    dout = np.concatenate([np.asarray(grad_x), np.asarray(grad_y)], axis=0)[None]
    grads, _ = model.net.backward(cache, dout)
    return grads
