"""Objective contracts: threshold convention, term values, decomposition."""

import numpy as np
import pytest

from pact.data import ConfigError
from pact.loss import (LossConfig, combined_loss, fit_tail_threshold, lower_quantile,
                       mse_loss, slope_loss, tail_loss)
from pact.numerics import ShapeError, Tensor, backward, grad_check, tensor

EPS = 0.001


def _pair(seed, b=4):
    rng = np.random.default_rng(seed)
    target = rng.normal(size=(b, 6)) * 0.3
    pred = target + rng.normal(size=(b, 6)) * 0.1
    return tensor(pred), target


class TestTailThreshold:
    def test_one_to_hundred(self):
        scores = np.arange(1.0, 101.0)
        assert fit_tail_threshold(scores, 0.05) == 95.0

    def test_constant_scores(self):
        assert fit_tail_threshold(np.full(17, 0.3), 0.05) == 0.3

    def test_two_values_half(self):
        assert fit_tail_threshold(np.array([0.1, 0.2]), 0.5) == 0.1

    def test_monotone_in_rho(self):
        scores = np.random.default_rng(0).normal(size=200)
        taus = [fit_tail_threshold(scores, rho) for rho in
                (0.01, 0.05, 0.1, 0.3, 0.5, 0.9)]
        assert all(a >= b for a, b in zip(taus, taus[1:]))

    def test_empty_rejected(self):
        with pytest.raises(ConfigError):
            fit_tail_threshold([], 0.05)

    def test_quantile_is_order_statistic(self):
        values = np.random.default_rng(1).normal(size=57)
        level = 0.83
        idx = int(np.ceil(level * 57)) - 1
        assert lower_quantile(values, level) == np.sort(values)[idx]


class TestMse:
    def test_perfect_zero(self):
        pred, target = _pair(0)
        assert float(mse_loss(pred, pred.data).data) == 0.0

    def test_single_error_sixth(self):
        target = np.zeros((1, 6))
        pred = tensor([[1.0, 0, 0, 0, 0, 0]])
        assert float(mse_loss(pred, target).data) == pytest.approx(1 / 6, abs=1e-15)

    def test_quadratic_homogeneity(self):
        pred, target = _pair(1)
        doubled = tensor(target + 2.0 * (pred.data - target))
        assert float(mse_loss(doubled, target).data) == pytest.approx(
            4.0 * float(mse_loss(pred, target).data), rel=1e-12)

    def test_shape_guard(self):
        with pytest.raises(ShapeError):
            mse_loss(tensor(np.zeros((2, 6))), np.zeros((3, 6)))


class TestTail:
    def test_empty_tail(self):
        pred, target = _pair(2)
        term, count = tail_loss(pred, target, np.full(4, 0.1), tau_tail=5.0)
        assert term is None and count == 0

    def test_single_member_value(self):
        target = np.zeros((3, 6))
        pred = tensor(np.vstack([np.zeros((2, 6)), np.full((1, 6), 0.1)]))
        term, count = tail_loss(pred, target, np.array([0.0, 0.0, 1.0]), 0.5)
        assert count == 1
        assert float(term.data) == pytest.approx(0.01, rel=1e-12)

    def test_all_members_equals_mse(self):
        pred, target = _pair(3)
        term, count = tail_loss(pred, target, np.zeros(4), tau_tail=-np.inf)
        assert count == 4
        assert float(term.data) == pytest.approx(
            float(mse_loss(pred, target).data), rel=1e-12)


class TestSlope:
    def test_perfect_prediction_hits_floor_exactly(self):
        target = np.random.default_rng(0).normal(size=(1, 6))
        value = float(slope_loss(tensor(target.copy()), target, EPS).data)
        assert value == EPS

    def test_floor_for_larger_batches(self):
        target = np.random.default_rng(1).normal(size=(16, 6))
        value = float(slope_loss(tensor(target.copy()), target, EPS).data)
        assert abs(value - EPS) <= 1e-18

    def test_shift_invariance(self):
        pred, target = _pair(4)
        shifted = tensor(pred.data + np.random.default_rng(2).normal(size=(4, 1)))
        a = float(slope_loss(pred, target, EPS).data)
        b = float(slope_loss(shifted, target, EPS).data)
        assert a == pytest.approx(b, rel=1e-12)

    def test_single_nonzero_slope_error(self):
        target = np.zeros((1, 6))
        pred = np.zeros((1, 6))
        pred[0, 3:] = 0.003          # one first-difference error of 0.003
        value = float(slope_loss(tensor(pred), target, EPS).data)
        expected = (np.sqrt(0.003 ** 2 + EPS ** 2) + 4 * EPS) / 5
        assert value == pytest.approx(expected, rel=1e-12)
        assert value == pytest.approx(0.0014325, abs=5e-7)

    def test_lower_bounded_by_eps(self):
        for seed in range(10):
            pred, target = _pair(seed + 10)
            assert float(slope_loss(pred, target, EPS).data) >= EPS


class TestCombined:
    def test_zero_weights_recover_mse_bitwise(self):
        pred, target = _pair(5)
        cfg = LossConfig(lambda_tail=0.0, lambda_slope=0.0)
        total, parts = combined_loss(pred, target, np.zeros(4), cfg)
        assert float(total.data) == float(mse_loss(pred, target).data)
        assert parts.total == parts.mse

    def test_perfect_prediction_slope_only(self):
        target = np.random.default_rng(3).normal(size=(1, 6))
        cfg = LossConfig(lambda_tail=0.0, lambda_slope=1.0)
        total, parts = combined_loss(tensor(target.copy()), target,
                                     np.array([target.max()]), cfg)
        assert float(total.data) == EPS
        assert parts.tail_batch_count == 0

    def test_decomposition_identity(self):
        for seed in range(10):
            pred, target = _pair(seed + 20, b=8)
            peaks = target.max(axis=1)
            cfg = LossConfig(lambda_tail=0.7, lambda_slope=0.3,
                             tau_tail=float(np.median(peaks)))
            _, parts = combined_loss(pred, target, peaks, cfg)
            recomposed = parts.mse + 0.7 * parts.tail + 0.3 * parts.slope
            assert abs(parts.total - recomposed) <= 1e-12

    def test_hand_batch_with_one_tail_member(self):
        target = np.zeros((2, 6))
        pred = np.array([[0.1, 0.1, 0.1, 0.1, 0.1, 0.1],
                         [0.0, 0.2, 0.0, 0.0, 0.0, 0.0]])
        peaks = np.array([0.0, 1.0])
        cfg = LossConfig(lambda_tail=0.5, lambda_slope=0.0, tau_tail=0.5)
        total, parts = combined_loss(tensor(pred), target, peaks, cfg)
        mse = (6 * 0.01 + 0.04) / 12.0
        tail = 0.04 / 6.0
        assert parts.mse == pytest.approx(mse, rel=1e-12)
        assert parts.tail == pytest.approx(tail, rel=1e-12)
        assert float(total.data) == pytest.approx(mse + 0.5 * tail, rel=1e-12)
        assert parts.tail_batch_count == 1

    def test_unfitted_threshold_rejected(self):
        pred, target = _pair(6)
        with pytest.raises(ConfigError):
            combined_loss(pred, target, np.zeros(4),
                          LossConfig(lambda_tail=0.5, lambda_slope=0.0))

    def test_empty_tail_contributes_zero(self):
        pred, target = _pair(7)
        cfg = LossConfig(lambda_tail=2.0, lambda_slope=0.0, tau_tail=99.0)
        total, parts = combined_loss(pred, target, np.zeros(4), cfg)
        assert parts.tail == 0.0 and parts.tail_batch_count == 0
        assert float(total.data) == parts.mse

    def test_differentiable_everywhere(self):
        target = np.random.default_rng(4).normal(size=(4, 6)) * 0.3
        peaks = target.max(axis=1)
        cfg = LossConfig(lambda_tail=0.5, lambda_slope=0.2,
                         tau_tail=float(np.median(peaks)))
        for seed in range(5):
            start = target + np.random.default_rng(seed).normal(size=(4, 6)) * 0.05

            def f(t):
                return combined_loss(t, target, peaks, cfg)[0]

            assert grad_check(f, start) < 1e-4

    def test_gradient_only_through_predictions(self):
        pred, target = _pair(8)
        peaks = target.max(axis=1)
        cfg = LossConfig(tau_tail=float(np.min(peaks)))
        pred.requires_grad = True
        total, _ = combined_loss(pred, target, peaks, cfg)
        grads = backward(total)
        assert pred in grads and np.all(np.isfinite(grads[pred]))
