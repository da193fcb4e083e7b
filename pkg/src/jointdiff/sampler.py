"""Deterministic DDIM sampling of joint (image, logits) pairs.

The mask-branch latent lives in b-scaled space throughout: it starts from
N(0, I), the network sees it as-is, and each step moves it towards the
rescaled clean estimate ``(2 softmax(y_hat) - 1) * b``.
"""
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import ParameterError
from .numerics import Rng, softmax
from .tensorio import DatasetManifest, SampleRecord, ensure_dir, tensor_write


@dataclass
class SamplerConfig:
    ddim_steps: int = 50
    eta: float = 0.0
    seed: int = 0
    num_samples: int = 16
    b: float = 1.0
    size: int = 32
    batch_size: int = 32

    def validate(self, sched):
        if not 1 <= self.ddim_steps <= sched.T_steps:
            raise ParameterError(f"ddim_steps must be in [1, {sched.T_steps}]")
        if self.eta != 0.0:
            raise ParameterError("only the deterministic sampler (eta = 0) is supported")
        if self.num_samples < 0:
            raise ParameterError("num_samples must be >= 0")
        if not self.b > 0:
            raise ParameterError("b must be > 0")

    def to_dict(self):
        return asdict(self)


def ddim_timesteps(T_steps, ddim_steps):
    """Evenly strided descending timesteps starting at ``T_steps``, ending above 0."""
    if not 1 <= ddim_steps <= T_steps:
        raise ParameterError(f"ddim_steps must be in [1, {T_steps}]")
    ks = np.arange(ddim_steps, 0, -1)
    return (ks * T_steps) // ddim_steps


def ddim_step(pred_clean, current, t, t_prev, sched):
    """Deterministic (eta = 0) DDIM update from ``t`` to ``t_prev``."""
    if not t > t_prev >= 0:
        raise ParameterError(f"need t > t_prev >= 0, got {t}, {t_prev}")
    a_t, s_t = sched.alpha[t], sched.sigma[t]
    if s_t == 0:
        raise ParameterError(f"sigma_t is zero at t={t}")
    eps_hat = (current - a_t * pred_clean) / s_t
    return sched.alpha[t_prev] * pred_clean + sched.sigma[t_prev] * eps_hat


def rescale_logits(logits, b, axis=1):
    """Map predicted logits to a clean mask estimate in (-b, b)."""
    return (softmax(logits, axis=axis) * 2.0 - 1.0) * b


def sample_batch(denoise, x_T, y_T, sched, ddim_steps, b, trace=None):
    """Run the joint sampler from given initial noise.

    Args:
        denoise: callable ``(x_t, y_t, t) -> (x_hat, y_hat)`` on batches.
        x_T, y_T: N x 1 x H x W and N x C x H x W initial latents.
        trace: optional list receiving per-step diagnostics.

    Returns:
        ``(x0, logits)``: final images and the last predicted raw logits.
    """
    ts = ddim_timesteps(sched.T_steps, ddim_steps)
    x = np.asarray(x_T, dtype=np.float64)
    y = np.asarray(y_T, dtype=np.float64)
    logits = None
    for i, t in enumerate(ts):
        t_prev = int(ts[i + 1]) if i + 1 < len(ts) else 0
        x_hat, logits = denoise(x.astype(np.float32), y.astype(np.float32), int(t))
        x_hat = np.asarray(x_hat, dtype=np.float64)
        logits = np.asarray(logits, dtype=np.float64)
        y_clean = rescale_logits(logits, b)
        if trace is not None:
            eps_y = (y - sched.alpha[t] * y_clean) / sched.sigma[t]
            trace.append({"t": int(t), "t_prev": t_prev, "max_abs_eps_y": float(np.abs(eps_y).max())})
        x = ddim_step(x_hat, x, int(t), t_prev, sched)
        y = ddim_step(y_clean, y, int(t), t_prev, sched)
        if trace is not None:
            trace[-1]["max_abs_y"] = float(np.abs(y).max())
    return x.astype(np.float32), logits.astype(np.float32)


def initial_noise(seed, index, num_classes, size):
    """Per-sample initial latents from stream ``index`` (order independent)."""
    rng = Rng(seed, index)
    x = rng.normal((1, size, size))
    y = rng.normal((num_classes, size, size))
    return x, y


def sample_pair(model, config, sched, index=0):
    """Generate one (image 1 x H x W, logits C x H x W) pair."""
    config.validate(sched)
    x_T, y_T = initial_noise(config.seed, index, model.num_classes, config.size)
    x0, logits = sample_batch(model, x_T[None], y_T[None], sched, config.ddim_steps, config.b)
    return x0[0], logits[0]


def sample_many(model, config, sched, start=0, count=None):
    """Generate samples ``start .. start+count-1`` in batches."""
    config.validate(sched)
    count = config.num_samples if count is None else count
    images, logits = [], []
    for lo in range(start, start + count, config.batch_size):
        idx = range(lo, min(lo + config.batch_size, start + count))
        noise = [initial_noise(config.seed, i, model.num_classes, config.size) for i in idx]
        x_T = np.stack([n[0] for n in noise])
        y_T = np.stack([n[1] for n in noise])
        x, y = sample_batch(model, x_T, y_T, sched, config.ddim_steps, config.b)
        images.append(x)
        logits.append(y)
    if not images:
        c, s = model.num_classes, config.size
        return np.zeros((0, 1, s, s), np.float32), np.zeros((0, c, s, s), np.float32)
    return np.concatenate(images), np.concatenate(logits)


def hard_mask(logits):
    """Per-pixel argmax (lowest index on ties) of C x H x W logits."""
    return np.argmax(np.asarray(logits), axis=0)


def synthesize_dataset(model, config, sched, out_dir):
    """Write generated (image, logits) pairs plus argmax masks and a manifest."""
    config.validate(sched)
    out_dir = ensure_dir(out_dir)
    records = []
    if config.num_samples:
        ensure_dir(out_dir / "data")
        images, logits = sample_many(model, config, sched)
        for i in range(config.num_samples):
            img_name = f"data/gen_{i:05d}_image.dktn"
            log_name = f"data/gen_{i:05d}_logits.dktn"
            hard_name = f"data/gen_{i:05d}_hard.dktn"
            tensor_write(out_dir / img_name, images[i])
            tensor_write(out_dir / log_name, logits[i])
            mask = hard_mask(logits[i])
            onehot = np.zeros_like(logits[i])
            np.put_along_axis(onehot, mask[None], 1.0, axis=0)
            tensor_write(out_dir / hard_name, onehot)
            records.append(SampleRecord(image=img_name, target=log_name, kind="logits",
                                        split="train", seed=i, hard_mask=hard_name))
    manifest = DatasetManifest(
        num_classes=model.num_classes,
        samples=records,
        role="generated",
        balancing={"b": config.b},
        meta={"sampler": config.to_dict(), "schedule": sched.to_dict()},
    )
    manifest.save(Path(out_dir) / "manifest.json")
    return manifest

