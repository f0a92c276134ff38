"""Focal loss, label smoothing, and learnable variance weighting."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trifuse import ops
from trifuse.gradcheck import grad_check
from trifuse.losses import (focal_from_targets, focal_loss, smoothed_targets,
                            uncertainty_weighted_total)
from trifuse.params import ParamStore
from trifuse.tape import Node, Tape


def _cross_entropy(logits, label):
    q = np.exp(logits - logits.max())
    q /= q.sum()
    return -math.log(q[label])


def test_gamma_zero_eps_zero_is_cross_entropy_uniform_logits():
    loss = focal_loss(None, Node(np.zeros(4)), label=2, gamma=0.0, smoothing=0.0)
    assert abs(float(loss.value) - math.log(4.0)) < 1e-12


def test_gamma_zero_recovers_cross_entropy_exactly(rng):
    for _ in range(20):
        logits = rng.normal(scale=3.0, size=7)
        label = int(rng.integers(7))
        loss = focal_loss(None, Node(logits), label, gamma=0.0, smoothing=0.0)
        assert abs(float(loss.value) - _cross_entropy(logits, label)) < 1e-12


def test_focal_binary_dominant_hand_value():
    # gamma=2, onehot target, q_y = 0.9: loss = -(0.1)^2 ln 0.9 = 0.0010536052
    q_y = 0.9
    logits = np.array([math.log(q_y), math.log(1.0 - q_y)])
    loss = focal_loss(None, Node(logits), label=0, gamma=2.0, smoothing=0.0)
    assert abs(float(loss.value) - 0.0010536051565782623) < 1e-12


def test_confident_correct_prediction_drives_loss_to_zero():
    logits = np.array([30.0, 0.0, 0.0])
    loss = focal_loss(None, Node(logits), label=0, gamma=2.0, smoothing=0.0)
    assert 0.0 <= float(loss.value) < 1e-10


def test_focal_loss_nonnegative_without_smoothing(rng):
    for _ in range(50):
        logits = rng.normal(scale=5.0, size=6)
        label = int(rng.integers(6))
        loss = focal_loss(None, Node(logits), label, gamma=rng.uniform(0, 4),
                          smoothing=0.0)
        assert float(loss.value) >= 0.0


@given(st.integers(0, 2**31 - 1))
@settings(max_examples=30, deadline=None)
def test_cross_entropy_monotonically_decreasing_in_target_prob(seed):
    rng = np.random.default_rng(seed)
    logits = rng.normal(size=5)
    label = int(rng.integers(5))
    bumped = logits.copy()
    bumped[label] += 0.5
    lo = focal_loss(None, Node(logits), label, gamma=0.0, smoothing=0.0)
    hi = focal_loss(None, Node(bumped), label, gamma=0.0, smoothing=0.0)
    assert float(hi.value) < float(lo.value)


def test_smoothed_targets_mix_onehot_with_uniform():
    t = smoothed_targets(np.array([1]), 4, 0.2)
    assert np.allclose(t, [[0.05, 0.85, 0.05, 0.05]], atol=1e-15)
    assert abs(t.sum() - 1.0) < 1e-12


def test_invalid_label_raises():
    with pytest.raises(ValueError, match="outside"):
        smoothed_targets(np.array([4]), 4, 0.0)
    with pytest.raises(ValueError, match="outside"):
        focal_loss(None, Node(np.zeros(3)), label=-1)


def test_loss_finite_for_extreme_logits_with_smoothing():
    logits = np.array([700.0, -700.0, 0.0])
    loss = focal_loss(None, Node(logits), label=0, gamma=2.0, smoothing=0.1)
    assert np.isfinite(float(loss.value))


def test_uncertainty_total_unit_sigmas():
    losses = [Node(1.0), Node(2.0), Node(3.0)]
    total = uncertainty_weighted_total(None, losses, Node(np.zeros(3)))
    assert abs(float(total.value) - 0.5 * 6.0) < 1e-12


def test_uncertainty_total_single_head():
    total = uncertainty_weighted_total(None, [Node(2.0)], Node(np.zeros(1)))
    assert abs(float(total.value) - 1.0) < 1e-12


def test_uncertainty_total_length_mismatch():
    with pytest.raises(ValueError, match="log_var"):
        uncertainty_weighted_total(None, [Node(1.0)], Node(np.zeros(2)))


def test_log_var_gradient_formula(rng):
    # d total / d s_i = -0.5 exp(-s_i) L_i + 0.5, checked against FD
    store = ParamStore()
    s = store.register("s", rng.normal(scale=0.5, size=4))
    fixed = [float(x) for x in rng.uniform(0.5, 3.0, size=4)]

    def loss_fn(tape):
        return uncertainty_weighted_total(tape, [ops.constant(v) for v in fixed], s)

    res = grad_check(store, ["s"], loss_fn, h=1e-5)
    assert res.max_rel_error <= 1e-7
    store.zero_grad()
    tape = Tape()
    tape.backward(loss_fn(tape))
    expected = -0.5 * np.exp(-s.value) * np.asarray(fixed) + 0.5
    assert np.allclose(s.grad, expected, atol=1e-12)


def test_optimal_log_var_converges_to_log_loss():
    # gradient descent on s alone: exp(-s) L = 1 at the optimum, so s -> ln L
    fixed_loss = 2.5
    s_val = 0.0
    for _ in range(4000):
        grad = -0.5 * math.exp(-s_val) * fixed_loss + 0.5
        s_val -= 0.05 * grad
    assert abs(s_val - math.log(fixed_loss)) < 1e-6
    # and the engine agrees with that gradient along the way
    store = ParamStore()
    s = store.register("s", np.array([s_val]))
    total = uncertainty_weighted_total(None, [Node(fixed_loss)], s)
    assert abs(float(total.value) - 0.5 * (1.0 + math.log(fixed_loss))) < 1e-9


def test_focal_gradient_passes_fd(rng):
    store = ParamStore()
    logits = store.register("logits", rng.normal(size=(3, 5)))
    targets = smoothed_targets(rng.integers(0, 5, size=3), 5, 0.1)

    def loss_fn(tape):
        return focal_from_targets(tape, logits, targets, gamma=2.0)

    res = grad_check(store, ["logits"], loss_fn, h=1e-5)
    assert res.max_rel_error <= 1e-6
