"""Variance-preserving linear noise schedule and the forward corruption."""
from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError

DEFAULT_BETA_START = 1e-4
DEFAULT_BETA_END = 0.02


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-timestep signal/noise scalars, indexed ``t = 0..T_steps``.

    Index 0 is the clean endpoint (``alpha = 1``, ``sigma = 0``); training
    timesteps are ``1..T_steps``.
    """

    T_steps: int
    beta_start: float
    beta_end: float
    beta: np.ndarray = field(repr=False)
    alpha: np.ndarray = field(repr=False)
    sigma: np.ndarray = field(repr=False)

    def to_dict(self):
        return {
            "kind": "linear",
            "T_steps": self.T_steps,
            "beta_start": self.beta_start,
            "beta_end": self.beta_end,
        }

    @classmethod
    def from_dict(cls, d):
        return make_linear(int(d["T_steps"]), float(d["beta_start"]), float(d["beta_end"]))

    def check_t(self, t, allow_zero=False):
        lo = 0 if allow_zero else 1
        t = np.asarray(t)
        if t.size == 0 or t.min() < lo or t.max() > self.T_steps:
            raise ParameterError(f"timestep {t} outside [{lo}, {self.T_steps}]")

    def coefficients(self, t, ndim=0):
        """``(alpha_t, sigma_t)``; for array ``t`` shaped to broadcast over a batch."""
        t = np.asarray(t)
        a, s = self.alpha[t], self.sigma[t]
        if t.ndim == 1 and ndim:
            shape = (-1,) + (1,) * (ndim - 1)
            a, s = a.reshape(shape), s.reshape(shape)
        return a, s


def make_linear(T_steps, beta_start=DEFAULT_BETA_START, beta_end=DEFAULT_BETA_END):
    if T_steps < 1:
        raise ParameterError("T_steps must be >= 1")
    if not 0 < beta_start <= beta_end < 1:
        raise ParameterError("need 0 < beta_start <= beta_end < 1")
    if T_steps == 1:
        betas = np.array([beta_start], dtype=np.float64)
    else:
        betas = np.linspace(beta_start, beta_end, T_steps, dtype=np.float64)
    alpha_bar = np.concatenate([[1.0], np.cumprod(1.0 - betas)])
    alpha = np.sqrt(alpha_bar)
    sigma = np.sqrt(1.0 - alpha_bar)
    for arr in (alpha, sigma):
        arr.setflags(write=False)
    return NoiseSchedule(
        T_steps=int(T_steps),
        beta_start=float(beta_start),
        beta_end=float(beta_end),
        beta=np.concatenate([[0.0], betas]),
        alpha=alpha,
        sigma=sigma,
    )


def corrupt_pair(x0, y0_scaled, t, sched, rng=None, tied_noise=False, noise=None):
    """Balanced forward corruption of an image / scaled-mask pair.

    ``x_t = alpha_t x0 + sigma_t eps_x`` and ``y'_t = alpha_t y0' + sigma_t eps_y``.
    Noise is drawn independently per modality unless ``tied_noise`` is set,
    in which case the image noise field is broadcast over every mask channel.
    ``noise`` may supply ``(eps_x, eps_y)`` directly instead of ``rng``.
    For batched N x C x H x W inputs ``t`` may be a length-N array.
    """
    sched.check_t(t, allow_zero=True)
    x0 = np.asarray(x0)
    a, s = sched.coefficients(t, ndim=x0.ndim)
    y0_scaled = np.asarray(y0_scaled)
    if noise is None:
        if rng is None:
            raise ParameterError("either rng or noise must be given")
        eps_x = rng.normal(x0.shape)
        if tied_noise:
            eps_y = np.broadcast_to(eps_x, y0_scaled.shape)
        else:
            eps_y = rng.normal(y0_scaled.shape)
    else:
        eps_x, eps_y = noise
    dtype = np.result_type(x0.dtype, np.float32)
    x_t = (a * x0 + s * np.asarray(eps_x)).astype(dtype)
    y_t = (a * y0_scaled + s * np.asarray(eps_y)).astype(dtype)
    return x_t, y_t


def snr_at(t, sched, mean_power_signal, noise_power=1.0):
    """``alpha_t^2 P(signal) / (sigma_t^2 P(noise))`` with per-element powers."""
    sched.check_t(t, allow_zero=True)
    s2 = sched.sigma[t] ** 2
    if s2 == 0:
        raise ParameterError(f"SNR is infinite at t={t} (sigma_t = 0)")
    return float(sched.alpha[t] ** 2 * mean_power_signal / (s2 * noise_power))
