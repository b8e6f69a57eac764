import math

import numpy as np
import pytest

from conftest import A, B, Q, R, W
from prsmpc.errors import CholeskyFailure
from prsmpc.numerics import lqr_gain, lyapunov_certificate, solve_discrete_lyapunov
from prsmpc.uncertainty import (
    DisturbanceSchedule,
    GaussianDisturbance,
    RngStream,
    expected_p_norm,
    propagate_variance,
    sample,
)


def test_degenerate_sample_is_mean():
    model = GaussianDisturbance(np.array([1.5, -2.0]), np.zeros((2, 2)))
    np.testing.assert_array_equal(sample(model, RngStream(1, 2)), [1.5, -2.0])


def test_sample_covariance_converges():
    model = GaussianDisturbance.zero_mean(W)
    gen = RngStream(7, 0).generator()
    draws = model.transform(gen.standard_normal((100_000, 2)))
    cov = np.cov(draws.T)
    assert abs(cov[0, 0] - 0.01) / 0.01 < 0.05
    assert abs(cov[1, 1] - 1.0) < 0.05
    # mean within 3 standard errors
    assert np.all(np.abs(draws.mean(axis=0)) <= 3 * np.sqrt(np.diag(W) / 100_000))


def test_fixed_seed_replays():
    model = GaussianDisturbance.zero_mean(W)
    a = sample(model, RngStream(3, 9))
    b = sample(model, RngStream(3, 9))
    np.testing.assert_array_equal(a, b)
    x = RngStream(3, 9).generator().standard_normal(50)
    y = RngStream(3, 9).generator().standard_normal(50)
    np.testing.assert_array_equal(x, y)


def test_distinct_streams_uncorrelated():
    x = RngStream(3, 0).generator().standard_normal(20_000)
    y = RngStream(3, 1).generator().standard_normal(20_000)
    assert not np.array_equal(x[:10], y[:10])
    assert abs(np.corrcoef(x, y)[0, 1]) < 4 / math.sqrt(20_000)


def test_child_streams_are_distinct():
    root = RngStream(5, 0)
    assert root.child(1) != root.child(2)
    assert root.child(1) == root.child(1)


def test_indefinite_covariance_rejected():
    model = GaussianDisturbance.zero_mean(np.diag([1.0, -0.5]))
    with pytest.raises(CholeskyFailure):
        sample(model, RngStream(0))


def test_mean_dimension_checked():
    with pytest.raises(ValueError):
        GaussianDisturbance(np.zeros(3), np.eye(2))


class TestVariance:
    def test_zero_steps(self):
        out = propagate_variance(np.eye(2), W, 0)
        assert len(out) == 1
        np.testing.assert_array_equal(out[0], np.zeros((2, 2)))

    def test_deadbeat(self):
        out = propagate_variance(np.zeros((2, 2)), W, 4)
        for s in out[1:]:
            np.testing.assert_array_equal(s, W)

    def test_converges_to_lyapunov(self):
        k, _ = lqr_gain(A, B, Q, R)
        a_k = A + B @ k
        out = propagate_variance(a_k, W, 200)
        np.testing.assert_allclose(out[-1], solve_discrete_lyapunov(a_k, W), atol=1e-8)

    def test_monotone_in_psd_order(self):
        k, _ = lqr_gain(A, B, Q, R)
        out = propagate_variance(A + B @ k, W, 30)
        for lo, hi in zip(out, out[1:]):
            assert np.linalg.eigvalsh(hi - lo).min() >= -1e-12


class TestSchedule:
    def test_burst_bookkeeping(self):
        base = GaussianDisturbance.zero_mean(W)
        burst = GaussianDisturbance.zero_mean(np.diag([10.0, 1.0]))
        sched = DisturbanceSchedule(base, burst, 10)
        xi = RngStream(1).generator().standard_normal((45, 2))
        w = sched.draw_sequence(xi)
        for k in range(45):
            expected = (burst if k in (10, 20, 30, 40) else base).transform(xi[k])
            np.testing.assert_array_equal(w[k], expected)
            assert sched.is_burst(k) == (k in (10, 20, 30, 40))
        assert sched.model_at(0) is base

    def test_no_burst(self):
        sched = DisturbanceSchedule(GaussianDisturbance.zero_mean(W))
        assert not any(sched.is_burst(k) for k in range(50))

    def test_period_required(self):
        base = GaussianDisturbance.zero_mean(W)
        with pytest.raises(ValueError):
            DisturbanceSchedule(base, base, 0)


class TestExpectedNorm:
    def test_zero_model(self):
        est = expected_p_norm(GaussianDisturbance.zero_mean(np.zeros((2, 2))), np.eye(2), 1000, RngStream(0))
        assert est.value == 0.0

    def test_half_normal_mean(self):
        sigma = 1.7
        est = expected_p_norm(GaussianDisturbance.zero_mean([[sigma**2]]), [[1.0]], 50_000, RngStream(4))
        assert abs(est.value - sigma * math.sqrt(2 / math.pi)) <= 3 * est.stderr

    def test_benchmark_reproducible(self):
        k, _ = lqr_gain(A, B, Q, R)
        p = lyapunov_certificate(A + B @ k, 0.1)
        model = GaussianDisturbance.zero_mean(W)
        a = expected_p_norm(model, p, 5000, RngStream(9))
        b = expected_p_norm(model, p, 5000, RngStream(9))
        assert a == b
        assert 0 < a.value < math.inf

    def test_minimum_samples(self):
        with pytest.raises(ValueError):
            expected_p_norm(GaussianDisturbance.zero_mean(W), np.eye(2), 10, RngStream(0))
