import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from jointdiff.errors import DimensionError, ParameterError, ValidationError
from jointdiff.metrics import Confusion, accumulate, report


def loop_confusion(gt, pred, c):
    m = np.zeros((c, c), dtype=np.int64)
    for g, p in zip(gt.ravel(), pred.ravel()):
        m[g, p] += 1
    return m


masks = st.integers(2, 6).flatmap(
    lambda c: st.tuples(
        st.just(c),
        st.integers(0, 2 ** 31),
        st.integers(1, 10),
        st.integers(1, 10),
    )
)


def random_pair(c, seed, h, w):
    r = np.random.default_rng(seed)
    return r.integers(0, c, (h, w)), r.integers(0, c, (h, w))


def test_identical_masks_are_diagonal():
    gt = np.array([[0, 1], [2, 2]])
    conf = accumulate(Confusion(3), gt, gt)
    assert np.array_equal(conf.counts, np.diag([1, 1, 2]))


def test_off_diagonal_increment():
    conf = accumulate(Confusion(2), np.zeros((2, 2), int), np.ones((2, 2), int))
    assert conf.counts[0, 1] == 4 and conf.total == 4


def test_out_of_range_and_shape():
    with pytest.raises(ValidationError):
        accumulate(Confusion(2), np.array([0, 2]), np.array([0, 1]))
    with pytest.raises(ValidationError):
        accumulate(Confusion(2), np.array([0, -1]), np.array([0, 1]))
    with pytest.raises(DimensionError):
        accumulate(Confusion(2), np.zeros(3, int), np.zeros(2, int))


@settings(max_examples=40, deadline=None)
@given(masks)
def test_matches_loop_oracle(args):
    c, seed, h, w = args
    gt, pred = random_pair(c, seed, h, w)
    assert np.array_equal(accumulate(Confusion(c), gt, pred).counts, loop_confusion(gt, pred, c))


def test_hand_matrix():
    rep = report(Confusion(2, [[3, 1], [1, 3]]))
    assert rep["per_class_iou"] == [pytest.approx(0.6, abs=1e-12)] * 2
    assert rep["miou"] == pytest.approx(0.6, abs=1e-9)
    assert rep["accuracy"] == pytest.approx(0.75, abs=1e-9)
    assert rep["f1"] == pytest.approx(0.75, abs=1e-12)
    assert rep["precision"] == pytest.approx(0.75) and rep["recall"] == pytest.approx(0.75)


def test_perfect_prediction():
    gt = np.array([[0, 1, 2]])
    rep = report(accumulate(Confusion(3), gt, gt))
    for k in ("miou", "f1", "precision", "recall", "accuracy"):
        assert rep[k] == 1.0


def test_absent_class_excluded():
    gt = np.array([[0, 0, 1, 1]])
    pred = np.array([[0, 1, 1, 1]])
    rep = report(accumulate(Confusion(3), gt, pred))
    assert rep["per_class_iou"][2] is None
    assert rep["miou"] == pytest.approx((1 / 2 + 2 / 3) / 2)


def test_empty_confusion():
    with pytest.raises(ParameterError):
        report(Confusion(3))


@settings(max_examples=40, deadline=None)
@given(masks, st.integers(0, 2 ** 31))
def test_additivity_bounds_and_permutation(args, perm_seed):
    c, seed, h, w = args
    gt, pred = random_pair(c, seed, h, w)
    gt2, pred2 = random_pair(c, seed + 1, h, w)
    split = accumulate(accumulate(Confusion(c), gt, pred), gt2, pred2)
    union = accumulate(Confusion(c), np.concatenate([gt, gt2]), np.concatenate([pred, pred2]))
    merged = accumulate(Confusion(c), gt, pred).merge(accumulate(Confusion(c), gt2, pred2))
    assert report(split) == report(union) == report(merged)

    rep = report(union)
    for k in ("miou", "f1", "precision", "recall", "accuracy"):
        assert 0.0 <= rep[k] <= 1.0
    assert rep["accuracy"] == pytest.approx(np.trace(union.counts) / union.total)

    perm = np.random.default_rng(perm_seed).permutation(c)
    relabelled = report(accumulate(Confusion(c), perm[gt], perm[pred]))
    original = report(accumulate(Confusion(c), gt, pred))
    for k in ("miou", "f1", "precision", "recall", "accuracy"):
        assert relabelled[k] == pytest.approx(original[k], abs=1e-12)
