import numpy as np
import pytest

import jointdiff.distill as distill
from conftest import finite_difference_check
from jointdiff.distill import LossWeights
from jointdiff.errors import DimensionError, ParameterError
from jointdiff.numerics import Rng
from jointdiff.student import (
    Student,
    StudentTrainConfig,
    _assemble,
    harden,
    predict_mask,
    student_forward,
    train_student,
)
from jointdiff.toydata import SceneSpec, generate_arrays


class FixedLogits:
    """Student stand-in whose network returns preset logits."""

    def __init__(self, logits):
        self.num_classes = logits.shape[0]
        self.net = self
        self.logits = logits

    def forward(self, images):
        return np.broadcast_to(self.logits, (len(images),) + self.logits.shape)


def test_zero_head_gives_zero_logits():
    model = Student.create(3, Rng(0), width=8, zero_head=True)
    z = student_forward(model, np.ones((1, 8, 8)))
    assert z.shape == (3, 8, 8) and not z.any()


def test_forward_deterministic():
    x = Rng(1).normal((1, 8, 8))
    a = student_forward(Student.create(3, Rng(0), width=8), x)
    b = student_forward(Student.create(3, Rng(0), width=8), x)
    assert np.array_equal(a, b)


def test_gradient_check():
    model = Student.create(3, Rng(2), width=8)
    net = model.net.astype(np.float64)
    worst, name = finite_difference_check(net, Rng(3).normal((2, 1, 8, 8)), None)
    assert worst < 1e-3, name


def test_shape_errors():
    model = Student.create(3, Rng(0), width=8)
    with pytest.raises(DimensionError):
        student_forward(model, np.zeros((2, 8, 8)))


class TestPredictMask:
    def test_ties_go_to_class_zero(self):
        assert not predict_mask(FixedLogits(np.zeros((3, 2, 2))), np.zeros((1, 2, 2))).any()

    def test_exact_argmax_and_round_trip(self):
        labels = Rng(0).integers(0, 4, (3, 3))
        onehot = np.eye(4)[labels].transpose(2, 0, 1)
        pred = predict_mask(FixedLogits(onehot * 3.0), np.zeros((1, 3, 3)))
        assert np.array_equal(pred, labels)

    def test_shift_invariance(self):
        logits = Rng(1).normal((3, 4, 4))
        shift = Rng(2).normal((1, 4, 4)) * 10
        x = np.zeros((1, 4, 4))
        assert np.array_equal(predict_mask(FixedLogits(logits), x), predict_mask(FixedLogits(logits + shift), x))

    def test_batch_input(self):
        model = Student.create(3, Rng(0), width=4)
        x = Rng(1).normal((2, 1, 8, 8))
        batch = predict_mask(model, x)
        assert np.array_equal(batch[1], predict_mask(model, x[1]))


def test_checkpoint_round_trip(tmp_path):
    model = Student.create(3, Rng(0), width=4)
    model.save(tmp_path / "s.ckpt")
    again, _ = Student.load(tmp_path / "s.ckpt")
    x = Rng(1).normal((1, 8, 8))
    assert np.array_equal(student_forward(model, x), student_forward(again, x))


@pytest.mark.parametrize("ratio", [0.5, 1.0, 1.5, 2.0])
def test_augmentation_ratios(toy16, ratio):
    tx, ty = toy16[0][:8], toy16[1][:8]
    gen_x = Rng(0).normal((16, 1, 16, 16))
    gen_logits = Rng(1).normal((16, 3, 16, 16))
    cfg = StudentTrainConfig(aug_ratio=ratio)
    images, targets, is_gen = _assemble(cfg, tx, ty, gen_x, gen_logits)
    assert len(images) == 8 + round(ratio * 8)
    assert is_gen.sum() == round(ratio * 8)
    hard = _assemble(StudentTrainConfig(aug_ratio=ratio, label_mode="hard"), tx, ty, gen_x, gen_logits)
    assert not hard[2].any()
    np.testing.assert_array_equal(hard[1][8:].argmax(axis=1), gen_logits[:round(ratio * 8)].argmax(axis=1))


def test_not_enough_generated(toy16):
    with pytest.raises(ParameterError):
        _assemble(StudentTrainConfig(aug_ratio=1.0), toy16[0][:8], toy16[1][:8], None, None)


def test_harden():
    z = Rng(0).normal((2, 3, 4, 4))
    h = harden(z)
    assert np.array_equal(h.sum(axis=1), np.ones((2, 4, 4)))
    assert np.array_equal(h.argmax(axis=1), z.argmax(axis=1))


def test_config_validation():
    for bad in ({"aug_ratio": -1}, {"label_mode": "fuzzy"}, {"batch_size": 0}):
        with pytest.raises(ParameterError):
            StudentTrainConfig(**bad)
    cfg = StudentTrainConfig.from_dict({"weights": {"lambda_ce": 1, "lambda_kd": 0.2, "lambda_dice": 0.5}})
    assert cfg.weights == LossWeights(1, 0.2, 0.5)
    assert StudentTrainConfig.from_dict(cfg.to_dict()) == cfg


def test_baseline_never_calls_kd(toy16, monkeypatch):
    def forbidden(*args, **kwargs):
        raise AssertionError("KD path used")

    monkeypatch.setattr(distill, "kd_loss_batch", forbidden)
    cfg = StudentTrainConfig(epochs=1, width=4, aug_ratio=0.0, weights=LossWeights(1.0, 0.0, 0.5))
    train_student(cfg, toy16[0][:16], toy16[1][:16])


def test_same_seed_same_trace(toy16, tmp_path):
    tx, ty, vx, vy = toy16
    cfg = StudentTrainConfig(epochs=2, width=4, aug_ratio=0.0, seed=3)
    _, a = train_student(cfg, tx, ty, vx, vy, out_dir=tmp_path)
    _, b = train_student(cfg, tx, ty, vx, vy)
    assert a == b
    assert (tmp_path / "student.ckpt").is_file()
    assert len((tmp_path / "metrics.jsonl").read_text().splitlines()) == 2


def test_soft_and_hard_training_run(toy16):
    tx, ty, vx, vy = toy16
    gen_x = tx[:16] + 0.05 * Rng(0).normal(tx[:16].shape).astype(np.float32)
    gen_logits = ty[:16] * 4.0
    for mode in ("soft", "hard"):
        cfg = StudentTrainConfig(epochs=1, width=4, aug_ratio=0.25, label_mode=mode)
        _, trace = train_student(cfg, tx, ty, vx, vy, gen_x, gen_logits)
        assert np.isfinite(trace[-1]["loss"])


def test_miou_improves_over_first_epochs():
    # epoch-to-epoch mIoU is noisy, so the improvement is measured across the span
    spec = SceneSpec(size=32, num_classes=5, seed=0)
    tx, ty = generate_arrays(spec, 256)
    vx, vy = generate_arrays(spec, 128, stream_offset=256)
    cfg = StudentTrainConfig(epochs=5, width=8, aug_ratio=0.0, seed=0)
    _, trace = train_student(cfg, tx, ty, vx, vy)
    miou = [r["miou"] for r in trace]
    assert miou[-1] > miou[0] + 0.1, miou
    assert max(miou) == miou[-1], miou
