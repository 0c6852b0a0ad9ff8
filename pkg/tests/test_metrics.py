import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dwi.errors import BadShape, LabelOutOfRange
from dwi.harness.metrics import confusion_matrix, factor_histograms, histogram_entropy, miou


def test_perfect_prediction():
    gt = np.array([[0, 1], [2, 2]])
    assert miou([gt], [gt], 3) == 1.0


def test_all_wrong_prediction():
    assert miou([np.ones((2, 2), int)], [np.zeros((2, 2), int)], 2) == 0.0


def test_worked_example():
    # class 0: inter 1, union 3; class 1: inter 1, union 3  ->  mean 1/3
    pred = np.array([0, 0, 1, 1])
    gt = np.array([0, 1, 0, 1])
    assert miou([pred], [gt], 2) == pytest.approx(1 / 3)
    # a half-right single class next to an absent one
    assert miou([np.array([1, 1, 1, 1])], [np.array([1, 1, 0, 0])], 3) == pytest.approx(0.25)


def test_half_image_example():
    gt = np.ones((2, 2), int)
    pred = np.array([[1, 1], [0, 0]])
    # IoU_1 = 2/4, IoU_0 = 0/2 (class 0 occurs in the prediction)
    assert miou([pred], [gt], 2) == pytest.approx(0.25)


def test_absent_classes_do_not_count():
    gt = np.zeros((3, 3), int)
    assert miou([gt], [gt], 10) == 1.0
    assert miou([], [], 3) == 0.0


def test_confusion_matrix_is_global_not_per_image():
    a, b = np.array([0, 0]), np.array([1, 1])
    cm = confusion_matrix([a, b], [a, a], 2)
    assert cm.tolist() == [[2, 2], [0, 0]]
    assert miou([a, b], [a, a], 2) == pytest.approx(0.25)


def test_label_and_shape_errors():
    with pytest.raises(LabelOutOfRange):
        miou([np.array([3])], [np.array([0])], 3)
    with pytest.raises(LabelOutOfRange):
        miou([np.array([0])], [np.array([-1])], 3)
    with pytest.raises(BadShape):
        miou([np.zeros(2, int)], [np.zeros(3, int)], 3)


@settings(max_examples=100, deadline=None)
@given(arrays(np.int64, (5, 4), elements=st.integers(0, 3)), arrays(np.int64, (5, 4), elements=st.integers(0, 3)))
def test_miou_bounds_and_symmetry(p, g):
    m = miou([p], [g], 4)
    assert 0.0 <= m <= 1.0
    assert m == pytest.approx(miou([g], [p], 4))


def test_factor_histograms():
    lam = np.array([[0.0, 1.0], [0.04, 0.96], [0.5, 0.5]])
    h = factor_histograms(lam, bins=20)
    assert h.shape == (2, 20)
    assert h[0].tolist()[:2] == [2, 0] and h[0, 10] == 1
    assert h[1, 19] == 2 and h[1, 10] == 1
    assert h.sum() == 6


def test_histogram_entropy():
    assert histogram_entropy(np.array([[5, 0], [0, 0]])) == 0.0
    assert histogram_entropy(np.array([[1, 1], [1, 1]])) == pytest.approx(np.log(2))
    assert histogram_entropy(np.zeros((2, 3))) == 0.0
