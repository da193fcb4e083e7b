"""Student segmentation network and its training over original + generated data."""
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .distill import DEFAULT_TEMPERATURE, LossWeights, student_loss_batch
from .errors import DimensionError, ParameterError, TrainingDivergence
from .metrics import Confusion, report
from .nn import AdamState, ConvNet, NetConfig, adam_step
from .numerics import Rng
from .tensorio import load_checkpoint, save_checkpoint


class Student:
    def __init__(self, net, num_classes):
        if net.cfg.in_ch != 1 or net.cfg.out_ch != num_classes or net.cfg.time_cond:
            raise DimensionError("student net must map 1 channel to C logits without time input")
        self.net = net
        self.num_classes = num_classes

    @classmethod
    def create(cls, num_classes, rng, width=16, zero_head=False, dtype=np.float32):
        cfg = NetConfig(1, num_classes, width=width, time_cond=False)
        return cls(ConvNet.create(cfg, rng, zero_head=zero_head, dtype=dtype), num_classes)

    @property
    def params(self):
        return self.net.params

    def logits(self, images):
        return self.net.forward(images)

    def save(self, path, **extra):
        header = {"kind": "student", "arch": self.net.cfg.to_dict(), "num_classes": self.num_classes}
        header.update(extra)
        save_checkpoint(path, self.params, header)

    @classmethod
    def load(cls, path):
        params, header = load_checkpoint(path)
        if header.get("kind") != "student":
            raise DimensionError(f"{path} is not a student checkpoint")
        return cls(ConvNet(NetConfig.from_dict(header["arch"]), params), header["num_classes"]), header


def student_forward(model, image):
    """Logits C x H x W for a single 1 x H x W image."""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[0] != 1:
        raise DimensionError(f"expected a 1 x H x W image, got {image.shape}")
    return model.net.forward(image[None])[0]


def predict_mask(model, image):
    """Hard H x W class map; ties go to the lowest class index."""
    image = np.asarray(image)
    if image.ndim == 3:
        return np.argmax(student_forward(model, image), axis=0)
    return np.argmax(model.net.forward(image), axis=1)


def evaluate(model, images, onehots, batch_size=64):
    conf = Confusion(model.num_classes)
    for lo in range(0, len(images), batch_size):
        pred = predict_mask(model, images[lo:lo + batch_size])
        conf.accumulate(onehots[lo:lo + batch_size].argmax(axis=1), pred)
    return report(conf)


@dataclass
class StudentTrainConfig:
    epochs: int = 30
    batch_size: int = 16
    lr: float = 1e-3
    weight_decay: float = 0.0
    seed: int = 0
    width: int = 16
    temperature: float = DEFAULT_TEMPERATURE
    weights: LossWeights = field(default_factory=LossWeights)
    aug_ratio: float = 1.0
    # "soft": distil from stored logits; "hard": argmax labels trained like originals
    label_mode: str = "soft"

    def __post_init__(self):
        if isinstance(self.weights, dict):
            self.weights = LossWeights(**self.weights)
        if self.aug_ratio < 0:
            raise ParameterError("aug_ratio must be >= 0")
        if self.label_mode not in ("soft", "hard"):
            raise ParameterError(f"unknown label_mode {self.label_mode!r}")
        if self.epochs < 0 or self.batch_size < 1:
            raise ParameterError("epochs must be >= 0 and batch_size >= 1")

    def to_dict(self):
        d = asdict(self)
        d["weights"] = self.weights.to_dict()
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})


def harden(logits):
    """Argmax one-hot of N x C x H x W logits."""
    idx = np.argmax(logits, axis=1)
    out = np.zeros_like(logits, dtype=np.float32)
    np.put_along_axis(out, idx[:, None], 1.0, axis=1)
    return out


def _assemble(cfg, train_images, train_onehots, gen_images, gen_logits):
    n_gen = int(round(cfg.aug_ratio * len(train_images)))
    if n_gen and (gen_images is None or len(gen_images) < n_gen):
        have = 0 if gen_images is None else len(gen_images)
        raise ParameterError(f"aug_ratio {cfg.aug_ratio} needs {n_gen} generated samples, have {have}")
    images = [np.asarray(train_images, dtype=np.float32)]
    targets = [np.asarray(train_onehots, dtype=np.float32)]
    generated = [np.zeros(len(train_images), dtype=bool)]
    if n_gen:
        images.append(np.asarray(gen_images[:n_gen], dtype=np.float32))
        if cfg.label_mode == "soft":
            targets.append(np.asarray(gen_logits[:n_gen], dtype=np.float32))
            generated.append(np.ones(n_gen, dtype=bool))
        else:
            targets.append(harden(np.asarray(gen_logits[:n_gen])))
            generated.append(np.zeros(n_gen, dtype=bool))
    return np.concatenate(images), np.concatenate(targets), np.concatenate(generated)


def train_student(cfg, train_images, train_onehots, test_images=None, test_onehots=None,
                  gen_images=None, gen_logits=None, out_dir=None, log=None):
    """Train a student from scratch.

    Original samples use CE + dice; generated samples use KD + dice on their
    stored logits (or, with ``label_mode="hard"``, CE + dice on argmax labels).
    The union is reshuffled every epoch with a seeded permutation.

    Returns ``(model, trace)``; ``trace`` holds one dict per epoch with the
    mean training loss and, when a test split is given, its metrics.
    """
    log = log or logging.getLogger(__name__)
    images, targets, is_gen = _assemble(cfg, train_images, train_onehots, gen_images, gen_logits)
    if len(images) == 0:
        raise ParameterError("no training samples")
    num_classes = targets.shape[1]
    model = Student.create(num_classes, Rng(cfg.seed, 0), width=cfg.width)
    opt = AdamState(lr=cfg.lr, weight_decay=cfg.weight_decay)
    rng = Rng(cfg.seed, 1)
    trace = []
    n = len(images)
    for epoch in range(1, cfg.epochs + 1):
        perm = rng.permutation(n)
        losses = []
        for lo in range(0, n, cfg.batch_size):
            idx = perm[lo:lo + cfg.batch_size]
            logits, cache = model.net.forward(images[idx], keep_cache=True)
            per_sample, dz = student_loss_batch(is_gen[idx], targets[idx], logits, cfg.weights, cfg.temperature)
            loss = float(per_sample.mean())
            if not np.isfinite(loss):
                raise TrainingDivergence(f"non-finite student loss in epoch {epoch}", trace)
            grads, _ = model.net.backward(cache, dz / len(idx))
            try:
                adam_step(model.params, grads, opt)
            except TrainingDivergence as exc:
                exc.trace = trace
                raise
            losses.append(loss * len(idx))
        rec = {"epoch": epoch, "loss": float(np.sum(losses) / n)}
        if test_images is not None and len(test_images):
            rep = evaluate(model, test_images, test_onehots)
            rec.update({k: rep[k] for k in ("miou", "f1", "precision", "recall", "accuracy")})
            rec["per_class_iou"] = rep["per_class_iou"]
        trace.append(rec)
        log.info("student epoch %d loss %.4f miou %s", epoch, rec["loss"], rec.get("miou"))
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        model.save(out_dir / "student.ckpt", config=cfg.to_dict(), epochs=cfg.epochs)
        with open(out_dir / "metrics.jsonl", "w") as fh:
            for rec in trace:
                fh.write(json.dumps(rec) + "\n")
    return model, trace
