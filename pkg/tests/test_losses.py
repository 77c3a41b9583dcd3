import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from framestack.core import DataError
from framestack.losses import (
    LossConfig,
    bce,
    binary_loss,
    cb_weights,
    compute_loss,
    eql_mask,
    focal,
    ldam_adjust,
    ldam_margins,
    sigmoid,
)

logit = lambda p: math.log(p / (1 - p))  # noqa: E731
scores_st = arrays(np.float64, (3, 4), elements=st.floats(-8, 8))
targets_st = arrays(np.float64, (3, 4), elements=st.floats(0, 1))
COUNTS = np.array([50, 20, 3, 1])


def test_bce_examples():
    assert bce(np.array([[0.0]]), np.array([[1.0]]))[0] == pytest.approx(math.log(2))
    loss, grad = bce(np.array([[logit(0.75)]]), np.array([[0.75]]))
    assert grad[0, 0] == pytest.approx(0, abs=1e-15)
    assert bce(np.array([[40.0, -40.0]]), np.array([[1.0, 0.0]]))[0] == pytest.approx(1e-7, abs=2e-7)


def test_bce_gradient_is_p_minus_y_over_n():
    s, y = np.array([[0.3, -1.2], [2.0, 0.1]]), np.array([[1, 0], [0.25, 1]])
    assert np.allclose(bce(s, y)[1], (sigmoid(s) - y) / 4)


def test_focal_examples():
    assert focal(np.array([[0.0]]), np.array([[1.0]]), 2.0)[0] == pytest.approx(0.25 * math.log(2))
    for p in np.linspace(0.5, 0.999, 50):
        s = np.array([[logit(p)]])
        assert focal(s, np.ones((1, 1)), 2.0)[0] <= bce(s, np.ones((1, 1)))[0]


@given(scores_st, targets_st)
def test_focal_gamma_zero_is_bce(s, y):
    a, b = focal(s, y, 0.0), bce(s, y)
    assert a[0] == b[0] and np.array_equal(a[1], b[1])


@settings(deadline=None)
@given(scores_st, targets_st)
def test_neutral_settings_reduce_to_bce(s, y):
    ref = bce(s, y)
    y_bin = (y > 0.5).astype(float)
    cases = [
        compute_loss(s, y, LossConfig("cb", beta_cb=0.0), COUNTS),
        compute_loss(s, y, LossConfig("eql", eql_lambda=0.0), COUNTS, rng=np.random.default_rng(0)),
        compute_loss(s, y, LossConfig("ldam_drw", ldam_c=0.0, drw_start=10), COUNTS, epoch=0),
    ]
    for loss, grad in cases:
        assert loss == ref[0] and np.array_equal(grad, ref[1])
    assert compute_loss(s, y_bin, LossConfig("bce"))[0] == bce(s, y_bin)[0]


@given(scores_st, targets_st, st.sampled_from(["bce", "focal", "cb", "ldam_drw", "eql"]))
def test_losses_non_negative(s, y, kind):
    loss, _ = compute_loss(s, y, LossConfig(kind), COUNTS, epoch=5, max_epochs=6,
                           rng=np.random.default_rng(0))
    assert loss >= 0


def test_zero_only_at_binary_targets():
    s = np.array([[40.0, -40.0]])
    assert focal(s, np.array([[1.0, 0.0]]))[0] < 1e-12
    assert bce(np.zeros((1, 2)), np.array([[0.5, 0.5]]))[0] > 0.5


def test_cb_weight_examples():
    w = cb_weights([1, 10], 0.99)
    raw = np.array([1.0, 0.01 / (1 - 0.99 ** 10)])
    assert raw[1] == pytest.approx(0.104583, abs=1e-6)
    assert w == pytest.approx([1.8106, 0.18936], abs=1e-4)
    assert np.allclose(cb_weights([3, 300], 1e-12), 1)
    assert np.allclose(cb_weights([7, 7, 7], 0.9999), 1)
    with pytest.raises(DataError):
        cb_weights([0, 2], 0.9)


def test_ldam_margin_and_drw():
    assert ldam_margins([16], 0.5)[0] == 0.25
    s, y = np.zeros((1, 2)), np.array([[1.0, 0.0]])
    before = ldam_adjust(s, y, [16, 1], 0.5, epoch=1, drw_start=3, beta_cb=0.99)
    assert before[0] == pytest.approx(bce(np.array([[-0.25, 0.0]]), y)[0])
    after = ldam_adjust(s, y, [16, 1], 0.5, epoch=3, drw_start=3, beta_cb=0.99)
    w = cb_weights([16, 1], 0.99)
    assert after[0] == pytest.approx(binary_loss(np.array([[-0.25, 0.0]]), y, class_weights=w)[0])
    assert LossConfig("ldam_drw").drw_epoch(100) == 60


def test_eql_mask_rules():
    y = np.zeros((4, 4))
    y[:, 3] = 1
    assert np.all(eql_mask(y, COUNTS, 0.0, 1.0, np.random.default_rng(0)) == 1)
    m = eql_mask(y, COUNTS, 0.5, 1.0, np.random.default_rng(0))
    assert np.all(m[:, 3] == 1)  # positives never suppressed
    freq = COUNTS / COUNTS.sum()
    assert np.all(m[:, :3] == np.where(freq[:3] < 0.5, 0, 1))


def test_eql_suppression_rate():
    y = np.zeros((1000, 100))
    m = eql_mask(y, np.r_[np.full(50, 1), np.full(50, 1000)], 0.001, 0.95, np.random.default_rng(3))
    assert abs(1 - m[:, :50].mean() - 0.95) < 0.01
    assert np.all(m[:, 50:] == 1)


def test_config_validation():
    for kw in (dict(kind="hinge"), dict(gamma_focal=-1), dict(beta_cb=1.0), dict(eql_gamma=2)):
        with pytest.raises(DataError):
            LossConfig(**kw)
    with pytest.raises(DataError):
        compute_loss(np.zeros((1, 4)), np.zeros((1, 4)), LossConfig("cb"))
    with pytest.raises(DataError):
        compute_loss(np.zeros((1, 4)), np.zeros((1, 4)), LossConfig("eql"), COUNTS)


def test_sigmoid_stable():
    assert np.all(np.isfinite(sigmoid(np.array([-1e4, 1e4]))))
    assert sigmoid(np.array([0.0]))[0] == 0.5
