"""Soft labels and the student losses (distillation, cross-entropy, soft dice).

Every ``*_batch`` function works on N x C x H x W arrays and returns the
per-sample losses together with their gradients w.r.t. the student logits.
The unbatched functions are thin single-sample wrappers.
"""
from dataclasses import asdict, dataclass

import numpy as np

from .errors import DimensionError, ParameterError, ValidationError
from .numerics import log_softmax, softmax

LOG_EPS = 1e-12
DICE_SMOOTH = 1.0
DEFAULT_TEMPERATURE = 2.0


@dataclass(frozen=True)
class LossWeights:
    lambda_ce: float = 1.0
    lambda_kd: float = 0.1
    lambda_dice: float = 0.5

    def __post_init__(self):
        w = (self.lambda_ce, self.lambda_kd, self.lambda_dice)
        if min(w) < 0 or max(w) <= 0:
            raise ParameterError("loss weights must be non-negative with at least one positive")

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class SoftLabel:
    probs: np.ndarray
    temperature: float


def make_soft_label(logits, temperature=DEFAULT_TEMPERATURE):
    """Temperature softmax of generated C x H x W logits."""
    return SoftLabel(probs=softmax(np.asarray(logits, dtype=np.float64), temperature, axis=0),
                     temperature=float(temperature))


def _same_shape(a, b):
    if np.shape(a) != np.shape(b):
        raise DimensionError(f"shape mismatch {np.shape(a)} vs {np.shape(b)}")


def _check_onehot(onehot, axis):
    onehot = np.asarray(onehot)
    if not (np.isin(onehot, (0, 1)).all() and np.all(onehot.sum(axis=axis) == 1)):
        raise ValidationError("targets are not one-hot")


def _pixels(x):
    return x.shape[-2] * x.shape[-1]


def kd_loss_batch(q, student_logits, temperature):
    """``(T^2 / N) sum_pixels CE(q, softmax(z / T))`` per sample, with gradient."""
    _same_shape(q, student_logits)
    z = np.asarray(student_logits, dtype=np.float64)
    logp = log_softmax(z, temperature, axis=1)
    n = _pixels(z)
    t2 = temperature * temperature
    loss = -t2 * (q * logp).sum(axis=(1, 2, 3)) / n
    grad = temperature * (np.exp(logp) - q) / n
    return loss, grad


def ce_loss_batch(onehot, student_logits, check=True):
    """Mean per-pixel cross-entropy at temperature 1, with gradient."""
    _same_shape(onehot, student_logits)
    if check:
        _check_onehot(onehot, axis=1)
    z = np.asarray(student_logits, dtype=np.float64)
    logp = log_softmax(z, axis=1)
    n = _pixels(z)
    loss = -(onehot * logp).sum(axis=(1, 2, 3)) / n
    grad = (np.exp(logp) - onehot) / n
    return loss, grad


def dice_loss_probs(target, probs, smooth=DICE_SMOOTH):
    """Soft dice ``1 - mean_c (2 sum p g + s) / (sum p + sum g + s)`` per sample.

    Returns the losses and the gradient w.r.t. ``probs``.
    """
    _same_shape(target, probs)
    g = np.asarray(target, dtype=np.float64)
    p = np.asarray(probs, dtype=np.float64)
    inter = (p * g).sum(axis=(2, 3))
    denom = p.sum(axis=(2, 3)) + g.sum(axis=(2, 3)) + smooth
    num = 2.0 * inter + smooth
    c = p.shape[1]
    loss = 1.0 - (num / denom).mean(axis=1)
    dp = -(2.0 * g * denom[:, :, None, None] - num[:, :, None, None]) / (denom[:, :, None, None] ** 2) / c
    return loss, dp


def dice_loss_batch(target, student_logits, smooth=DICE_SMOOTH):
    """Soft dice against ``softmax(student_logits)``; gradient w.r.t. logits."""
    z = np.asarray(student_logits, dtype=np.float64)
    p = softmax(z, axis=1)
    loss, dp = dice_loss_probs(target, p, smooth)
    dz = p * (dp - (p * dp).sum(axis=1, keepdims=True))
    return loss, dz


def student_loss_batch(is_generated, targets, student_logits, weights, temperature=DEFAULT_TEMPERATURE):
    """Per-sample student loss for a mixed batch.

    Generated samples carry stored logits and use
    ``lambda_kd * kd + lambda_dice * dice(softmax(stored))``; original samples
    carry one-hot masks and use ``lambda_ce * ce + lambda_dice * dice(onehot)``.
    """
    is_generated = np.asarray(is_generated, dtype=bool)
    z = np.asarray(student_logits, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    loss = np.zeros(z.shape[0])
    grad = np.zeros_like(z)
    gen = np.flatnonzero(is_generated)
    org = np.flatnonzero(~is_generated)
    if len(org):
        t = targets[org]
        _check_onehot(t, axis=1)
        if weights.lambda_ce:
            l, g = ce_loss_batch(t, z[org], check=False)
            loss[org] += weights.lambda_ce * l
            grad[org] += weights.lambda_ce * g
        if weights.lambda_dice:
            l, g = dice_loss_batch(t, z[org])
            loss[org] += weights.lambda_dice * l
            grad[org] += weights.lambda_dice * g
    if len(gen):
        stored = targets[gen]
        if weights.lambda_kd:
            q = softmax(stored, temperature, axis=1)
            l, g = kd_loss_batch(q, z[gen], temperature)
            loss[gen] += weights.lambda_kd * l
            grad[gen] += weights.lambda_kd * g
        if weights.lambda_dice:
            l, g = dice_loss_batch(softmax(stored, 1.0, axis=1), z[gen])
            loss[gen] += weights.lambda_dice * l
            grad[gen] += weights.lambda_dice * g
    return loss, grad


# -- single-sample wrappers ---------------------------------------------------

def kd_loss(soft, student_logits, temperature=None):
    temperature = soft.temperature if temperature is None else temperature
    _same_shape(soft.probs, student_logits)
    loss, _ = kd_loss_batch(soft.probs[None], np.asarray(student_logits)[None], temperature)
    return float(loss[0])


def ce_loss(onehot, student_logits):
    loss, _ = ce_loss_batch(np.asarray(onehot)[None], np.asarray(student_logits)[None])
    return float(loss[0])


def dice_loss(target_probs, student_probs, smooth=DICE_SMOOTH):
    loss, _ = dice_loss_probs(np.asarray(target_probs)[None], np.asarray(student_probs)[None], smooth)
    return float(loss[0])


def student_loss(batch_source, targets, student_logits, weights=LossWeights(),
                 temperature=DEFAULT_TEMPERATURE, target_kind=None):
    """Single-sample student loss; ``batch_source`` is "original" or "generated".

    ``target_kind`` ("onehot" or "logits"), when given, must agree with the
    source.
    """
    if batch_source not in ("original", "generated"):
        raise ParameterError(f"unknown source {batch_source!r}")
    expected = "logits" if batch_source == "generated" else "onehot"
    if target_kind is not None and target_kind != expected:
        raise ValidationError(f"{batch_source} samples need {expected} targets, got {target_kind}")
    loss, _ = student_loss_batch([batch_source == "generated"], np.asarray(targets)[None],
                                 np.asarray(student_logits)[None], weights, temperature)
    return float(loss[0])


def entropy(probs, axis=0):
    p = np.clip(np.asarray(probs, dtype=np.float64), LOG_EPS, 1.0)
    return -(p * np.log(p)).sum(axis=axis)
