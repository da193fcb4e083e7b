"""Segmentation metrics from a confusion matrix (rows = truth, cols = prediction)."""
import numpy as np

from .errors import DimensionError, ParameterError, ValidationError


class Confusion:
    def __init__(self, num_classes, counts=None):
        self.num_classes = int(num_classes)
        if counts is None:
            counts = np.zeros((num_classes, num_classes), dtype=np.int64)
        self.counts = np.asarray(counts, dtype=np.int64)
        if self.counts.shape != (num_classes, num_classes) or (self.counts < 0).any():
            raise ValidationError("confusion counts must be a non-negative C x C matrix")

    @property
    def total(self):
        return int(self.counts.sum())

    def accumulate(self, gt_mask, pred_mask):
        gt = np.asarray(gt_mask)
        pred = np.asarray(pred_mask)
        if gt.shape != pred.shape:
            raise DimensionError(f"mask shapes differ: {gt.shape} vs {pred.shape}")
        c = self.num_classes
        for m in (gt, pred):
            if m.size and (m.min() < 0 or m.max() >= c):
                raise ValidationError(f"class index outside [0, {c})")
        idx = gt.astype(np.int64).ravel() * c + pred.astype(np.int64).ravel()
        self.counts += np.bincount(idx, minlength=c * c).reshape(c, c)
        return self

    def merge(self, other):
        return Confusion(self.num_classes, self.counts + other.counts)


def accumulate(conf, gt_mask, pred_mask):
    return conf.accumulate(gt_mask, pred_mask)


def _ratio(num, den):
    out = np.zeros_like(num, dtype=np.float64)
    np.divide(num, den, out=out, where=den > 0)
    return out


def report(conf):
    """Per-class IoU plus macro mIoU / F1 / precision / recall and accuracy.

    Classes absent from both truth and prediction are excluded from every
    average and reported with IoU ``None``.
    """
    m = conf.counts.astype(np.float64)
    total = m.sum()
    if total <= 0:
        raise ParameterError("empty confusion matrix")
    tp = np.diag(m)
    gt = m.sum(axis=1)
    pred = m.sum(axis=0)
    fp = pred - tp
    fn = gt - tp
    present = (gt + pred) > 0
    iou = _ratio(tp, tp + fp + fn)
    precision = _ratio(tp, tp + fp)
    recall = _ratio(tp, tp + fn)
    f1 = _ratio(2 * precision * recall, precision + recall)
    sel = present
    return {
        "per_class_iou": [float(v) if p else None for v, p in zip(iou, present)],
        "miou": float(iou[sel].mean()),
        "f1": float(f1[sel].mean()),
        "precision": float(precision[sel].mean()),
        "recall": float(recall[sel].mean()),
        "accuracy": float(tp.sum() / total),
        "pixels": int(total),
    }
