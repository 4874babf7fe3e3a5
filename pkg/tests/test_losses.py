import numpy as np
import pytest

from wtx.errors import ConfigError, ShapeError
from wtx.gradcheck import max_relative_error, numeric_gradient
from wtx.losses import sigmoid_bce, smooth_l1, total_loss


def rng(seed=0):
    return np.random.default_rng(seed)


# --- smooth L1 ----------------------------------------------------------------

def test_smooth_l1_zero_at_match():
    x = rng(0).standard_normal((3, 4))
    lv = smooth_l1(x, x.copy())
    assert lv.value == 0.0
    assert np.all(lv.grad == 0.0)


@pytest.mark.parametrize("residual,expected", [(0.5, 0.125), (2.0, 1.5), (1.0, 0.5)])
def test_smooth_l1_scalar_branches(residual, expected):
    lv = smooth_l1(np.array([[residual]]), np.array([[0.0]]))
    assert abs(lv.value - expected) < 1e-15


def test_smooth_l1_matches_elementwise_oracle_and_fd():
    pred = rng(1).standard_normal((6, 4)) * 1.5
    target = rng(2).standard_normal((6, 4))
    lv = smooth_l1(pred, target)
    total = 0.0
    for i in range(6):
        for j in range(4):
            r = pred[i, j] - target[i, j]
            total += 0.5 * r * r if abs(r) < 1.0 else abs(r) - 0.5
    assert abs(lv.value - total / 24.0) < 1e-12
    f = lambda: smooth_l1(pred, target).value
    assert max_relative_error(lv.grad, numeric_gradient(f, pred)) < 1e-6


def test_smooth_l1_gradient_is_clamped_residual():
    pred = np.array([[0.5, 2.0, -3.0, -0.25]])
    lv = smooth_l1(pred, np.zeros((1, 4)))
    assert np.allclose(lv.grad, np.array([[0.5, 1.0, -1.0, -0.25]]) / 4.0)


def test_smooth_l1_c1_continuity_at_unit_residual():
    delta = 1e-7
    lo = smooth_l1(np.array([[1.0 - delta]]), np.zeros((1, 1)))
    hi = smooth_l1(np.array([[1.0 + delta]]), np.zeros((1, 1)))
    assert abs(lo.value - hi.value) <= 2 * delta + 1e-12
    # both branch formulas agree at |r| = 1: 0.5 r^2 -> grad r, |r| - 0.5 -> grad 1
    at_kink = smooth_l1(np.array([[1.0]]), np.zeros((1, 1)))
    assert abs(at_kink.value - 0.5) < 1e-15
    assert abs(at_kink.grad[0, 0] - 1.0) < 1e-9
    # and the one-sided gradients differ only at the delta scale itself
    assert abs(lo.grad[0, 0] - hi.grad[0, 0]) <= delta + 1e-12


def test_smooth_l1_shape_mismatch():
    with pytest.raises(ShapeError):
        smooth_l1(np.zeros((2, 2)), np.zeros((2, 3)))


# --- sigmoid BCE ----------------------------------------------------------------

def test_bce_logit_zero_target_one_is_ln2():
    lv = sigmoid_bce(np.zeros((2, 3)), np.ones((2, 3)))
    assert abs(lv.value - np.log(2.0)) < 1e-15


def test_bce_stability_at_extreme_logits():
    lv_hi = sigmoid_bce(np.array([[50.0]]), np.array([[1.0]]))
    assert 0.0 <= lv_hi.value < 1e-20
    lv_lo = sigmoid_bce(np.array([[-50.0]]), np.array([[1.0]]))
    assert abs(lv_lo.value - 50.0) < 1e-12
    huge = sigmoid_bce(np.array([[1e4, -1e4]]), np.array([[0.0, 0.0]]))
    assert np.isfinite(huge.value)


def test_bce_rejects_non_binary_targets():
    with pytest.raises(ValueError):
        sigmoid_bce(np.zeros((2, 2)), np.full((2, 2), 0.5))


def test_bce_matches_finite_differences():
    logits = rng(3).standard_normal((5, 7)) * 2.0
    targets = (rng(4).random((5, 7)) < 0.5).astype(float)
    lv = sigmoid_bce(logits, targets)
    f = lambda: sigmoid_bce(logits, targets).value
    assert max_relative_error(lv.grad, numeric_gradient(f, logits)) < 1e-6


def test_bce_gradient_formula():
    logits = rng(5).standard_normal((3, 3))
    targets = (rng(6).random((3, 3)) < 0.5).astype(float)
    lv = sigmoid_bce(logits, targets)
    sig = 1.0 / (1.0 + np.exp(-logits))
    assert np.allclose(lv.grad, (sig - targets) / 9.0, atol=1e-15)


# --- total loss ----------------------------------------------------------------

def test_total_alpha_zero_equals_cls():
    pred = rng(7).standard_normal((2, 2))
    cls = sigmoid_bce(pred, np.ones((2, 2)))
    rec = smooth_l1(pred, np.zeros((2, 2)))
    combined = total_loss(cls, rec, 0.0)
    assert combined.value == cls.value


def test_total_paper_arithmetic():
    cls = sigmoid_bce(np.zeros((1, 1)), np.ones((1, 1)))
    cls.value = 0.5
    rec = smooth_l1(np.zeros((1, 1)), np.zeros((1, 1)))
    rec.value = 0.01
    assert abs(total_loss(cls, rec, 20.0).value - 0.7) < 1e-15


def test_total_rejects_negative_alpha():
    cls = sigmoid_bce(np.zeros((1, 1)), np.ones((1, 1)))
    with pytest.raises(ConfigError):
        total_loss(cls, None, -1.0)


def test_total_gradient_is_weighted_sum_of_branches():
    # A shared upstream x feeds both branches; d(total)/dx must equal the
    # weighted sum of branch gradients (checked against finite differences).
    x = rng(8).standard_normal((3, 4))
    targets = (rng(9).random((3, 4)) < 0.5).astype(float)
    w_ref = rng(10).standard_normal((3, 4))
    alpha = 20.0

    def value():
        c = sigmoid_bce(x, targets)
        r = smooth_l1(x, w_ref)
        return total_loss(c, r, alpha).value

    comb = total_loss(sigmoid_bce(x, targets), smooth_l1(x, w_ref), alpha)
    analytic = comb.grad_cls + comb.grad_rec
    assert max_relative_error(analytic, numeric_gradient(value, x)) < 1e-6
