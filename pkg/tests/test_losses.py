import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from conftest import central_diff, rel_err
from ltvrr.losses import (LossConfig, combined_loss, focal_loss, softmax_rows, soft_target_loss,
                          triplet_softmax_loss, vilhub_loss)


def test_softmax_rows():
    np.testing.assert_allclose(softmax_rows([[0.0, 0.0, 0.0, 0.0]]), [[0.25] * 4])
    big = softmax_rows([[1000.0, 0.0]])
    assert np.all(np.isfinite(big)) and big[0, 0] == 1.0 and big[0, 1] == 0.0
    np.testing.assert_allclose(softmax_rows([[math.log(2), 0.0]]), [[2 / 3, 1 / 3]], rtol=1e-15)


def test_triplet_softmax_uniform():
    loss, _ = triplet_softmax_loss(np.zeros((3, 4)), [0, 1, 3])
    assert loss == pytest.approx(math.log(4), abs=1e-15)


def test_weights_scale_loss(rng):
    Z = rng.standard_normal((5, 4))
    t = rng.integers(4, size=5)
    w = rng.uniform(0.5, 2, 4)
    assert triplet_softmax_loss(Z, t, 2 * w)[0] == pytest.approx(2 * triplet_softmax_loss(Z, t, w)[0])


def test_extreme_logits_stay_finite():
    Z = np.array([[1000.0, -1000.0, 0.0]])
    for loss, grad in (triplet_softmax_loss(Z, [1]), focal_loss(Z, [1], 2.0), vilhub_loss(Z),
                       soft_target_loss(Z, [[0.5, 0.5, 0.0]])):
        assert np.isfinite(loss) and np.all(np.isfinite(grad))
    assert triplet_softmax_loss(Z, [1])[0] == pytest.approx(2000.0)


def test_focal_vanishes_at_confident_target():
    loss, _ = focal_loss(np.array([[50.0, 0.0, 0.0]]), [0], 2.0)
    assert loss < 1e-40


def test_focal_gamma_zero_is_softmax(rng):
    Z = rng.standard_normal((6, 5))
    t = rng.integers(5, size=6)
    a, ga = focal_loss(Z, t, 0.0)
    b, gb = triplet_softmax_loss(Z, t)
    assert abs(a - b) < 1e-12
    np.testing.assert_allclose(ga, gb, atol=1e-12)


def test_vilhub_values():
    assert vilhub_loss(np.zeros((4, 5)))[0] == 0.0
    assert vilhub_loss(np.array([[800.0, 0.0]]))[0] == 0.5
    # a batch whose rows cover the classes evenly is also uniform in aggregate
    assert vilhub_loss(np.array([[5.0, 0.0], [0.0, 5.0]]))[0] < 1e-30


def test_combined_gamma(rng):
    Z = rng.standard_normal((4, 6))
    t = rng.integers(6, size=4)
    base = triplet_softmax_loss(Z, t)[0]
    assert combined_loss(Z, t, LossConfig(gamma_vilhub=0.0))[0] == base
    l1 = combined_loss(Z, t, LossConfig(gamma_vilhub=1.0))[0]
    l2 = combined_loss(Z, t, LossConfig(gamma_vilhub=2.0))[0]
    assert abs((l2 - l1) - vilhub_loss(Z)[0]) < 1e-12


def test_soft_targets_reduce_to_hard(rng):
    Z = rng.standard_normal((5, 4))
    t = rng.integers(4, size=5)
    onehot = np.eye(4)[t]
    w = rng.uniform(0.5, 2, 4)
    for weights in (None, w):
        a, ga = soft_target_loss(Z, onehot, weights)
        b, gb = triplet_softmax_loss(Z, t, weights)
        assert a == b
        np.testing.assert_allclose(ga, gb, rtol=1e-15, atol=1e-17)


def test_soft_targets_minimized_by_softmax(rng):
    Z = rng.standard_normal((3, 4))
    P = softmax_rows(Z)
    loss, grad = soft_target_loss(Z, P)
    entropy = -(P * np.log(P)).sum(axis=1).mean()
    assert loss == pytest.approx(entropy, abs=1e-12)
    np.testing.assert_allclose(grad, 0.0, atol=1e-15)


def test_soft_targets_must_be_normalized():
    with pytest.raises(ValueError):
        soft_target_loss(np.zeros((1, 3)), [[0.5, 0.4, 0.0]])


def test_config_validation():
    with pytest.raises(ValueError):
        LossConfig(gamma_vilhub=-1.0)
    with pytest.raises(ValueError):
        LossConfig(kind="eql")


# -- gradient oracle ---------------------------------------------------------

def check_grad(fn, Z, tol):
    loss, grad = fn(Z)
    numeric = central_diff(lambda z: fn(z)[0], Z)
    assert rel_err(grad, numeric) < tol


def test_softmax_grad(rng):
    Z = rng.standard_normal((3, 5))
    t = rng.integers(5, size=3)
    check_grad(lambda z: triplet_softmax_loss(z, t), Z, 1e-6)


@pytest.mark.parametrize("gamma", [0.0, 0.5, 2.0, 5.0])
def test_focal_grad(rng, gamma):
    Z = rng.standard_normal((4, 5))
    t = rng.integers(5, size=4)
    check_grad(lambda z: focal_loss(z, t, gamma), Z, 1e-6)


def test_vilhub_grad(rng):
    check_grad(vilhub_loss, rng.standard_normal((4, 7)), 1e-6)


def test_combined_grad(rng):
    Z = rng.standard_normal((4, 6))
    t = rng.integers(6, size=4)
    check_grad(lambda z: combined_loss(z, t, LossConfig(gamma_vilhub=10.0)), Z, 1e-6)


def test_soft_target_grad(rng):
    Z = rng.standard_normal((3, 3))
    T = np.array([[0.75, 0.25, 0.0], [0.0, 0.75, 0.25], [0.25, 0.0, 0.75]])
    check_grad(lambda z: soft_target_loss(z, T), Z, 1e-6)
    check_grad(lambda z: focal_loss(z, T, 2.0), Z, 1e-6)


# -- properties ----------------------------------------------------------------

logits = arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(2, 6)),
                elements=st.floats(-20, 20, allow_nan=False))


@settings(max_examples=100, deadline=None)
@given(logits, st.data())
def test_losses_nonnegative_and_shift_invariant(Z, data):
    B, K = Z.shape
    t = np.array(data.draw(st.lists(st.integers(0, K - 1), min_size=B, max_size=B)))
    c = data.draw(st.floats(-50, 50))
    shifted = Z + c
    for fn in (lambda z: triplet_softmax_loss(z, t), lambda z: focal_loss(z, t, 2.0), vilhub_loss,
               lambda z: combined_loss(z, t, LossConfig(gamma_vilhub=3.0))):
        a, b = fn(Z)[0], fn(shifted)[0]
        assert a >= 0
        assert a == pytest.approx(b, rel=1e-9, abs=1e-9)


@settings(max_examples=100, deadline=None)
@given(logits, st.randoms(use_true_random=False))
def test_vilhub_permutation_invariant(Z, rnd):
    perm = list(range(Z.shape[0]))
    rnd.shuffle(perm)
    assert vilhub_loss(Z[perm])[0] == pytest.approx(vilhub_loss(Z)[0], rel=1e-12, abs=1e-15)


@settings(max_examples=50, deadline=None)
@given(logits, st.floats(0, 100), st.floats(0, 100))
def test_combined_affine_in_gamma(Z, g1, g2):
    t = np.zeros(Z.shape[0], dtype=int)
    hub = vilhub_loss(Z)[0]
    l1 = combined_loss(Z, t, LossConfig(gamma_vilhub=g1))[0]
    l2 = combined_loss(Z, t, LossConfig(gamma_vilhub=g2))[0]
    assert l2 - l1 == pytest.approx((g2 - g1) * hub, rel=1e-9, abs=1e-9)


def test_gradients_over_many_random_batches():
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(100):
        B, K = rng.integers(1, 6), rng.integers(2, 7)
        Z = rng.standard_normal((B, K)) * 2
        t = rng.integers(K, size=B)
        cfg = LossConfig(gamma_vilhub=float(rng.uniform(0, 10)))
        loss, grad = combined_loss(Z, t, cfg)
        worst = max(worst, rel_err(grad, central_diff(lambda z: combined_loss(z, t, cfg)[0], Z)))
    assert worst < 1e-5
