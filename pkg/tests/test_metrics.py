"""Metric tests against hand-computed values."""

import numpy as np
import pytest

from segrobust import metrics
from segrobust.numcore import Tensor
from segrobust.synthdata import VOID


def test_one_hot_void_rows_zero():
    mask = np.array([[0, 1], [VOID, 2]], dtype=np.uint8)
    hot = metrics.one_hot(mask, 3)
    np.testing.assert_array_equal(hot[0, 0], [1, 0, 0])
    np.testing.assert_array_equal(hot[0, 1], [0, 1, 0])
    np.testing.assert_array_equal(hot[1, 0], [0, 0, 0])
    np.testing.assert_array_equal(hot[1, 1], [0, 0, 1])


def test_cross_entropy_uniform():
    h, w, c = 4, 4, 4
    probs = np.full((h, w, c), 1.0 / c)
    mask = np.zeros((h, w), dtype=np.uint8)
    assert metrics.cross_entropy(probs, mask) == pytest.approx(np.log(c))


def test_cross_entropy_void_divisor_stays_full():
    # one of two pixels void: loss halves instead of renormalizing
    probs = np.full((1, 2, 2), 0.5)
    all_valid = np.array([[0, 0]], dtype=np.uint8)
    half_void = np.array([[0, VOID]], dtype=np.uint8)
    full = metrics.cross_entropy(probs, all_valid)
    half = metrics.cross_entropy(probs, half_void)
    assert half == pytest.approx(full / 2.0)


def test_cross_entropy_manual():
    probs = np.array([[[0.7, 0.3], [0.2, 0.8]]])
    mask = np.array([[0, 1]], dtype=np.uint8)
    expected = (-np.log(0.7) - np.log(0.8)) / 2.0
    assert metrics.cross_entropy(probs, mask) == pytest.approx(expected)


def test_cross_entropy_shape_mismatch():
    from segrobust.numcore import ShapeError
    with pytest.raises(ShapeError):
        metrics.cross_entropy_graph(Tensor(np.full((2, 2, 2), 0.5)),
                                    np.zeros((3, 3), dtype=np.uint8))


def test_cos_sim_basic():
    assert metrics.cos_sim([1.0, 0.0], [1.0, 0.0]) == pytest.approx(1.0)
    assert metrics.cos_sim([1.0, 0.0], [0.0, 1.0]) == pytest.approx(0.0)
    assert metrics.cos_sim([1.0, 2.0], [-1.0, -2.0]) == pytest.approx(-1.0)
    # zero vector guard maps to 0 instead of dividing by zero
    assert metrics.cos_sim([0.0, 0.0], [1.0, 1.0]) == pytest.approx(0.0)


def test_cos_sim_flattens():
    a = np.arange(6.0).reshape(2, 3)
    b = np.arange(6.0).reshape(3, 2)
    assert metrics.cos_sim(a, b) == pytest.approx(1.0)


def test_pixel_error_and_agreement():
    probs = np.zeros((2, 2, 2))
    probs[..., 0] = 1.0  # predicts class 0 everywhere
    mask = np.array([[0, 1], [VOID, 0]], dtype=np.uint8)
    assert metrics.pixel_error(probs, mask) == pytest.approx(1.0 / 3.0)
    assert metrics.pixel_agreement(probs, mask) == pytest.approx(2.0 / 3.0)


def test_pixel_error_all_void_raises():
    probs = np.full((1, 1, 2), 0.5)
    mask = np.full((1, 1), VOID, dtype=np.uint8)
    with pytest.raises(ValueError):
        metrics.pixel_error(probs, mask)
    with pytest.raises(ValueError):
        metrics.miou(probs, mask)


def test_predicted_mask_tie_breaks_low():
    probs = np.full((1, 1, 3), 1.0 / 3.0)
    assert metrics.predicted_mask(probs)[0, 0] == 0


def test_miou_hand_computed():
    # truth: [0, 0, 1, 1]; pred: [0, 1, 1, 1]
    probs = np.zeros((1, 4, 2))
    probs[0, 0, 0] = 1.0
    probs[0, 1:, 1] = 1.0
    mask = np.array([[0, 0, 1, 1]], dtype=np.uint8)
    # IoU(class0) = 1/2, IoU(class1) = 2/3
    assert metrics.miou(probs, mask) == pytest.approx((0.5 + 2.0 / 3.0) / 2.0)


def test_miou_perfect_and_void_excluded():
    mask = np.array([[0, 1], [VOID, 1]], dtype=np.uint8)
    probs = np.zeros((2, 2, 2))
    probs[0, 0, 0] = 1.0
    probs[0, 1, 1] = 1.0
    probs[1, 0, 0] = 1.0  # wrong would-be class, but pixel is void
    probs[1, 1, 1] = 1.0
    assert metrics.miou(probs, mask) == pytest.approx(1.0)


def test_miou_union_classes():
    # prediction introduces a class absent from truth: it joins the mean as 0
    mask = np.zeros((1, 2), dtype=np.uint8)
    probs = np.zeros((1, 2, 2))
    probs[0, 0, 0] = 1.0
    probs[0, 1, 1] = 1.0
    # IoU(0) = 1/2, IoU(1) = 0
    assert metrics.miou(probs, mask) == pytest.approx(0.25)


def test_dataset_miou():
    assert metrics.dataset_miou([0.5, 1.0]) == pytest.approx(0.75)
    with pytest.raises(ValueError):
        metrics.dataset_miou([])
