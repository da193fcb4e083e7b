"""Joint training of the denoiser on image / one-hot mask pairs.

Per sample: normalise the one-hot mask to {-1, 1}, scale it by the
balancing factor, corrupt both modalities at a random timestep, predict the
clean image and class logits, and minimise ``L2(x_hat, x0) + CE(y_hat, mask)``.
"""
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .balance import normalize_mask, scale_mask
from .denoiser import Denoiser
from .errors import ParameterError, TrainingDivergence
from .nn import AdamState, adam_step
from .numerics import Rng, log_softmax, softmax
from .schedule import corrupt_pair, make_linear

log = logging.getLogger(__name__)


@dataclass
class DiffTrainConfig:
    steps: int = 500
    batch_size: int = 16
    lr: float = 1e-3
    weight_decay: float = 0.0
    seed: int = 0
    T_steps: int = 200
    beta_start: float = 1e-4
    beta_end: float = 0.02
    b: float | None = None
    width: int = 16
    emb_dim: int = 32
    l2_weight: float = 1.0
    ce_weight: float = 1.0
    tied_noise: bool = False
    # optional first phase on 2x down-sampled pairs
    low_res_steps: int = 0
    checkpoint_every: int = 0
    log_every: int = 50
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.steps < 0 or self.low_res_steps < 0:
            raise ParameterError("steps must be non-negative")
        if self.batch_size < 1:
            raise ParameterError("batch_size must be >= 1")

    def schedule(self):
        return make_linear(self.T_steps, self.beta_start, self.beta_end)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        return cls(**known)


def _batched(x0, onehot):
    x0 = np.asarray(x0, dtype=np.float32)
    onehot = np.asarray(onehot, dtype=np.float32)
    if x0.ndim == 3:
        return x0[None], onehot[None], True
    return x0, onehot, False


def train_loss(model, x0, onehot, t, rng, sched, b, tied_noise=False, weights=(1.0, 1.0),
               noise=None, return_grads=False):
    """Joint denoising loss for one sample (1 x H x W) or a batch (N x 1 x H x W).

    Returns ``(loss, {"l2", "ce"})``; with ``return_grads`` also the
    parameter gradients.
    """
    x0, onehot, _ = _batched(x0, onehot)
    y0 = scale_mask(normalize_mask(onehot), b)
    t = np.asarray(t)
    if t.ndim == 0:
        t = np.full(x0.shape[0], int(t))
    sched.check_t(t)
    x_t, y_t = corrupt_pair(x0, y0, t, sched, rng=rng, tied_noise=tied_noise, noise=noise)
    stack = np.concatenate([x_t, y_t], axis=1)
    if return_grads:
        out, cache = model.net.forward(stack, t, keep_cache=True)
    else:
        out = model.net.forward(stack, t)
    x_hat = out[:, :1].astype(np.float64)
    y_hat = out[:, 1:].astype(np.float64)
    diff = x_hat - x0
    l2 = float(np.mean(diff * diff))
    npix = onehot.shape[0] * onehot.shape[2] * onehot.shape[3]
    ce = float(-(onehot * log_softmax(y_hat, axis=1)).sum() / npix)
    w_l2, w_ce = weights
    loss = w_l2 * l2 + w_ce * ce
    parts = {"l2": l2, "ce": ce}
    if not return_grads:
        return loss, parts
    dx = w_l2 * 2.0 * diff / diff.size
    dy = w_ce * (softmax(y_hat, axis=1) - onehot) / npix
    grads, _ = model.net.backward(cache, np.concatenate([dx, dy], axis=1))
    return loss, parts, grads


def downsample_pairs(images, onehots):
    """2x down-sampling: bilinear (2x2 mean) for images, majority via argmax for masks."""
    n, c, h, w = onehots.shape
    img = images.reshape(n, 1, h // 2, 2, w // 2, 2).mean(axis=(3, 5))
    avg = onehots.reshape(n, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))
    idx = avg.argmax(axis=1)
    oh = np.zeros_like(avg)
    np.put_along_axis(oh, idx[:, None], 1.0, axis=1)
    return img.astype(np.float32), oh.astype(np.float32)


def _run_phase(model, images, onehots, steps, cfg, sched, b, opt, rng, trace, step0, out_dir):
    n = images.shape[0]
    for i in range(steps):
        step = step0 + i + 1
        idx = rng.integers(0, n, cfg.batch_size)
        t = rng.integers(1, sched.T_steps + 1, cfg.batch_size)
        loss, parts, grads = train_loss(
            model, images[idx], onehots[idx], t, rng, sched, b,
            tied_noise=cfg.tied_noise, weights=(cfg.l2_weight, cfg.ce_weight), return_grads=True,
        )
        rec = {"step": step, "loss": loss, "l2": parts["l2"], "ce": parts["ce"]}
        trace.append(rec)
        if not np.isfinite(loss):
            raise TrainingDivergence(f"non-finite loss at step {step}", trace)
        try:
            adam_step(model.params, grads, opt)
        except TrainingDivergence as exc:
            exc.trace = trace
            raise
        if cfg.log_every and step % cfg.log_every == 0:
            recent = np.mean([r["loss"] for r in trace[-cfg.log_every:]])
            log.info("diffusion step %d loss %.4f", step, recent)
        if out_dir is not None and cfg.checkpoint_every and step % cfg.checkpoint_every == 0:
            model.save(out_dir / f"denoiser_step{step}.ckpt", step=step, b=b)


def train_diffusion(cfg, images, onehots, out_dir=None):
    """Train a joint denoiser from scratch.

    Args:
        cfg: :class:`DiffTrainConfig`; ``cfg.b`` must be the dataset's
            precomputed balancing factor.
        images: N x 1 x H x W array in [-1, 1].
        onehots: N x C x H x W one-hot masks.
        out_dir: optional directory for ``loss.jsonl`` and checkpoints.

    Returns:
        ``(model, trace)`` where ``trace`` is a list of per-step dicts.
    """
    if cfg.b is None:
        raise ParameterError("balancing factor b must be precomputed")
    images = np.asarray(images, dtype=np.float32)
    onehots = np.asarray(onehots, dtype=np.float32)
    if images.shape[0] == 0:
        raise ParameterError("empty training set")
    normalize_mask(onehots)  # validates one-hot
    num_classes = onehots.shape[1]
    sched = cfg.schedule()
    model = Denoiser.create(num_classes, Rng(cfg.seed, 0), width=cfg.width, emb_dim=cfg.emb_dim)
    opt = AdamState(lr=cfg.lr, weight_decay=cfg.weight_decay)
    rng = Rng(cfg.seed, 1)
    trace = []
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
    try:
        if cfg.low_res_steps:
            lo_img, lo_oh = downsample_pairs(images, onehots)
            _run_phase(model, lo_img, lo_oh, cfg.low_res_steps, cfg, sched, cfg.b, opt, rng, trace, 0, out_dir)
        _run_phase(model, images, onehots, cfg.steps, cfg, sched, cfg.b, opt, rng, trace,
                   cfg.low_res_steps, out_dir)
    finally:
        if out_dir is not None:
            with open(out_dir / "loss.jsonl", "w") as fh:
                for rec in trace:
                    fh.write(json.dumps(rec) + "\n")
    if out_dir is not None:
        model.save(out_dir / "denoiser.ckpt", step=len(trace), b=cfg.b,
                   schedule=sched.to_dict(), config=cfg.to_dict(), image_size=int(images.shape[-1]))
    return model, trace
