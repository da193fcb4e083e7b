"""SNR-based balancing factor between the image and mask modalities.

Scaling the normalised mask by ``b = sqrt(P(image) / P(mask))`` makes both
modalities lose signal at the same rate under a shared noise schedule.
Powers are pooled over the whole dataset and expressed per element.
"""
from dataclasses import asdict, dataclass

import numpy as np

from .errors import DegenerateSignalError, ParameterError, ValidationError
from .numerics import mean_power

MIN_POWER = 1e-12
MIN_B = 1e-6


@dataclass(frozen=True)
class BalancingFactor:
    b: float
    power_image: float
    power_mask: float
    dataset_id: str = ""
    num_samples: int = 0
    method: str = "dft"

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def normalize_mask(onehot):
    """Map a one-hot mask (channel axis first) from {0, 1} to {-1, 1}.

    Works for C x H x W and N x C x H x W inputs.
    """
    onehot = np.asarray(onehot)
    axis = 0 if onehot.ndim == 3 else 1
    ok = np.isin(onehot, (0, 1)).all() and np.all(onehot.sum(axis=axis) == 1)
    if not ok:
        raise ValidationError("mask is not one-hot at every pixel")
    return (onehot * 2 - 1).astype(np.float32)


def scale_mask(y0, b):
    if not b > 0:
        raise ParameterError(f"balancing factor must be > 0, got {b}")
    return (np.asarray(y0) * b).astype(np.result_type(y0, np.float32))


def unscale_mask(y0_scaled, b):
    if not b > 0:
        raise ParameterError(f"balancing factor must be > 0, got {b}")
    return np.asarray(y0_scaled) / b


def _pooled_power(fields, method):
    total = 0.0
    count = 0
    for f in fields:
        f = np.asarray(f, dtype=np.float64)
        planes = f.reshape((-1,) + f.shape[-2:])
        for plane in planes:
            if method == "dft":
                total += mean_power(plane)
            else:
                total += float(np.sum(plane * plane))
            count += plane.size
    return total, count


def compute_balancing_factor(images, masks, dataset_id="", method="dft"):
    """Pooled balancing factor for a dataset.

    Args:
        images: iterable of image tensors (1 x H x W or H x W).
        masks: iterable of normalised {-1, 1} masks (C x H x W).
        method: ``"dft"`` sums spectral power per channel; ``"parseval"``
            sums squared pixel values. Both agree to rounding.
    """
    if method not in ("dft", "parseval"):
        raise ParameterError(f"unknown method {method!r}")
    images = list(images)
    masks = list(masks)
    if not images or len(images) != len(masks):
        raise ParameterError("dataset is empty or images/masks counts differ")
    img_total, img_count = _pooled_power(images, method)
    mask_total, mask_count = _pooled_power(masks, method)
    p_img = img_total / img_count
    p_mask = mask_total / mask_count
    if p_img < MIN_POWER or p_mask < MIN_POWER:
        raise DegenerateSignalError(f"signal power too small (image {p_img:g}, mask {p_mask:g})")
    b = float(np.sqrt(p_img / p_mask))
    if b < MIN_B:
        raise DegenerateSignalError(f"balancing factor {b:g} below {MIN_B:g}")
    return BalancingFactor(
        b=b,
        power_image=p_img,
        power_mask=p_mask,
        dataset_id=dataset_id,
        num_samples=len(images),
        method=method,
    )


def balancing_factor_from_manifest(manifest, split="train", method="dft"):
    """Balancing factor over one split of an on-disk one-hot dataset."""
    recs = manifest.split(split)
    if not recs:
        raise ParameterError(f"no samples in split {split!r}")
    images, masks = [], []
    for rec in recs:
        img, target = manifest.load(rec)
        images.append(img)
        masks.append(normalize_mask(target))
    return compute_balancing_factor(
        images, masks, dataset_id=manifest.meta.get("dataset_id", str(manifest.root)), method=method
    )
