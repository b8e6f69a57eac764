import math

import numpy as np
import pytest
import scipy.linalg
import scipy.stats

from conftest import A, B, Q, R, W
from prsmpc.errors import CholeskyFailure, DomainError, NonConvergent
from prsmpc.numerics import (
    chi2_cdf,
    chi2_quantile,
    dare_residual,
    lqr_gain,
    lyapunov_certificate,
    lyapunov_residual,
    min_eigenvalue,
    normal_cdf,
    normal_quantile,
    psd_factor,
    solve_discrete_lyapunov,
    spectral_radius,
)


def _inf_norm(m):
    return float(np.abs(m).max())


class TestLyapunov:
    def test_zero_dynamics_returns_w(self):
        np.testing.assert_allclose(solve_discrete_lyapunov(np.zeros((2, 2)), np.eye(2)), np.eye(2), atol=1e-15)

    def test_scalar_closed_form(self):
        assert solve_discrete_lyapunov(np.array([[0.5]]), np.array([[1.0]]))[0, 0] == pytest.approx(4 / 3, abs=1e-14)

    def test_double_integrator_residual(self):
        k, _ = lqr_gain(A, B, Q, R)
        a_k = A + B @ k
        sigma = solve_discrete_lyapunov(a_k, W)
        assert lyapunov_residual(a_k, sigma, W) <= 1e-10
        # independent oracle: plain fixed-point sum
        ref = np.zeros((2, 2))
        for _ in range(2000):
            ref = a_k @ ref @ a_k.T + W
        np.testing.assert_allclose(sigma, ref, atol=1e-12)

    def test_matches_scipy(self):
        rng = np.random.default_rng(3)
        for n in range(1, 7):
            a = rng.standard_normal((n, n))
            a *= 0.95 / spectral_radius(a)
            m = rng.standard_normal((n, n))
            w = m @ m.T
            sigma = solve_discrete_lyapunov(a, w)
            np.testing.assert_allclose(sigma, scipy.linalg.solve_discrete_lyapunov(a, w), rtol=1e-8, atol=1e-10)
            assert lyapunov_residual(a, sigma, w) <= 1e-10 * max(1.0, _inf_norm(w))

    def test_unstable_raises(self):
        with pytest.raises(NonConvergent):
            solve_discrete_lyapunov(np.array([[1.1]]), np.array([[1.0]]))


class TestRiccati:
    def test_deadbeat_system(self):
        q = np.diag([2.0, 3.0])
        k, p = lqr_gain(np.zeros((2, 2)), np.eye(2), q, np.eye(2))
        np.testing.assert_allclose(k, 0.0, atol=1e-14)
        np.testing.assert_allclose(p, q, atol=1e-14)

    def test_scalar_fixed_point(self):
        k, p = lqr_gain(np.array([[1.0]]), np.array([[1.0]]), np.array([[1.0]]), np.array([[1.0]]))
        p = p[0, 0]
        assert p == pytest.approx((1 + math.sqrt(5)) / 2, abs=1e-12)
        assert abs(1 + p - p * p / (1 + p) - p) <= 1e-12
        assert k[0, 0] == pytest.approx(-p / (1 + p), abs=1e-12)

    def test_double_integrator(self):
        k, p = lqr_gain(A, B, Q, R)
        assert dare_residual(A, B, Q, R, p) <= 1e-8
        assert spectral_radius(A + B @ k) < 1.0
        np.testing.assert_allclose(p, scipy.linalg.solve_discrete_are(A, B, Q, R), rtol=1e-9)
        # gain formula
        np.testing.assert_allclose(k, -np.linalg.solve(R + B.T @ p @ B, B.T @ p @ A), atol=1e-12)

    def test_value_iteration_oracle(self):
        _, p = lqr_gain(A, B, Q, R)
        ref = Q.copy()
        for _ in range(5000):
            ref = Q + A.T @ ref @ A - A.T @ ref @ B @ np.linalg.solve(R + B.T @ ref @ B, B.T @ ref @ A)
        np.testing.assert_allclose(p, ref, rtol=1e-9)

    def test_random_pairs(self):
        rng = np.random.default_rng(11)
        for n in range(1, 5):
            for _ in range(5):
                a = rng.standard_normal((n, n))
                b = rng.standard_normal((n, max(1, n // 2)))
                q = np.eye(n)
                r = np.eye(b.shape[1])
                k, p = lqr_gain(a, b, q, r)
                assert dare_residual(a, b, q, r, p) <= 1e-8 * max(1.0, _inf_norm(p))
                assert spectral_radius(a + b @ k) < 1.0


class TestCertificate:
    def test_zero_dynamics(self):
        np.testing.assert_allclose(lyapunov_certificate(np.zeros((2, 2)), 1.0), np.eye(2), atol=1e-15)

    def test_scalar(self):
        assert lyapunov_certificate(np.array([[0.5]]), 0.75)[0, 0] == pytest.approx(1.0, abs=1e-14)

    def test_closed_loop(self):
        k, _ = lqr_gain(A, B, Q, R)
        a_k = A + B @ k
        p = lyapunov_certificate(a_k, 0.1)
        assert _inf_norm(a_k.T @ p @ a_k - p + 0.1 * np.eye(2)) <= 1e-10
        assert min_eigenvalue(p) > 0

    def test_nonpositive_epsilon(self):
        with pytest.raises(DomainError):
            lyapunov_certificate(np.zeros((1, 1)), 0.0)


class TestEigen:
    def test_identity(self):
        assert min_eigenvalue(np.eye(3)) == pytest.approx(1.0, abs=1e-12)

    def test_diagonal(self):
        assert min_eigenvalue(np.diag([4.0, 0.25])) == pytest.approx(0.25, abs=1e-12)

    def test_char_poly_bisection(self):
        rng = np.random.default_rng(5)
        m = rng.standard_normal((4, 4))
        p = m @ m.T + 0.5 * np.eye(4)
        det = lambda lam: np.linalg.det(p - lam * np.eye(4))  # noqa: E731
        lo, hi = 0.0, float(np.trace(p))
        # smallest root: det changes sign first between 0 and the bound found by scanning
        grid = np.linspace(lo, hi, 20001)
        vals = np.array([det(x) for x in grid])
        idx = int(np.argmax(np.sign(vals[1:]) != np.sign(vals[:-1])))
        a, b = grid[idx], grid[idx + 1]
        for _ in range(200):
            mid = 0.5 * (a + b)
            if np.sign(det(mid)) == np.sign(det(a)):
                a = mid
            else:
                b = mid
        assert min_eigenvalue(p) == pytest.approx(0.5 * (a + b), abs=1e-8)


class TestQuantiles:
    def test_normal_examples(self):
        assert normal_quantile(0.5) == pytest.approx(0.0, abs=1e-12)
        assert normal_quantile(0.8) == pytest.approx(0.841621, abs=1e-6)
        assert normal_quantile(0.95) == pytest.approx(1.644854, abs=1e-6)

    def test_chi2_examples(self):
        assert chi2_quantile(0.0, 3) == 0.0
        assert chi2_quantile(0.9, 2) == pytest.approx(-2 * math.log(0.1), abs=1e-9)
        assert chi2_quantile(0.6, 1) == pytest.approx(0.70833, abs=1e-5)

    @pytest.mark.parametrize("p", [0.0, 1.0, -0.1, 1.5])
    def test_normal_domain(self, p):
        with pytest.raises(DomainError):
            normal_quantile(p)

    @pytest.mark.parametrize("p", [1.0, -1e-9])
    def test_chi2_domain(self, p):
        with pytest.raises(DomainError):
            chi2_quantile(p, 2)

    def test_round_trips_on_grid(self):
        grid = np.round(np.arange(0.01, 1.0, 0.01), 2)
        for p in grid:
            assert abs(normal_cdf(normal_quantile(p)) - p) <= 1e-8
            for dof in range(1, 7):
                assert abs(chi2_cdf(chi2_quantile(p, dof), dof) - p) <= 1e-8

    def test_against_scipy(self):
        for p in (0.01, 0.3, 0.6, 0.9, 0.99):
            assert normal_quantile(p) == pytest.approx(scipy.stats.norm.ppf(p), abs=1e-9)
            for dof in range(1, 7):
                assert chi2_quantile(p, dof) == pytest.approx(scipy.stats.chi2.ppf(p, dof), abs=1e-8)

    def test_chi2_one_dof_is_squared_normal(self):
        for p in np.round(np.arange(0.01, 1.0, 0.01), 2):
            assert abs(chi2_quantile(p, 1) - normal_quantile((1 + p) / 2) ** 2) <= 1e-8


class TestFactor:
    def test_cholesky_reproduces(self):
        m = np.array([[2.0, 0.3], [0.3, 1.0]])
        f = psd_factor(m)
        np.testing.assert_allclose(f @ f.T, m, atol=1e-14)

    def test_semidefinite(self):
        m = np.diag([1.0, 0.0])
        f = psd_factor(m)
        np.testing.assert_allclose(f @ f.T, m, atol=1e-14)

    def test_indefinite(self):
        with pytest.raises(CholeskyFailure):
            psd_factor(np.diag([1.0, -1.0]))
