import os
import subprocess
import sys

import numpy as np
import pytest

from prsmpc import _core
from prsmpc.errors import IterationLimit
from prsmpc.optimizer import QpForm, kkt_residuals, solve_qp, verify_certificate
from qp_oracle import brute_force_qp, random_qp, random_qp_cases

CASES = random_qp_cases()


def test_random_qps_match_enumeration():
    for qp in CASES:
        sol = solve_qp(qp)
        x_ref, cost_ref = brute_force_qp(qp.hessian, qp.g, qp.e_mat, qp.f_vec, qp.g_mat, qp.h_vec)
        if x_ref is None:
            assert sol.status == "infeasible"
            assert verify_certificate(qp, sol.certificate)
            continue
        assert sol.optimal
        assert abs(sol.optimal_cost - cost_ref) <= 1e-6 * max(1.0, abs(cost_ref))


def test_kkt_residuals_of_optimal_points():
    for qp in CASES:
        sol = solve_qp(qp)
        if not sol.optimal:
            continue
        res = kkt_residuals(qp, sol.x, sol.mult_eq, sol.mult_in)
        assert max(res.values()) <= 1e-6


@pytest.mark.skipif(_core._qpcore is None, reason="compiled kernel not built")
def test_compiled_and_python_kernels_agree():
    for qp in CASES:
        j0 = np.linalg.inv(np.linalg.cholesky(qp.hessian)).T
        args = (j0, qp.g, qp.e_mat, qp.f_vec, qp.g_mat, qp.h_vec, 1e-6, 1000)
        s_c, x_c, me_c, mi_c, it_c = _core._qpcore.dual_active_set(*args)
        s_p, x_p, me_p, mi_p, it_p = _core.qp_py.dual_active_set(*args)
        assert s_c == s_p and it_c == it_p
        np.testing.assert_allclose(np.asarray(x_c), x_p, rtol=1e-9, atol=1e-10)
        np.testing.assert_allclose(np.asarray(mi_c), mi_p, rtol=1e-9, atol=1e-10)


def test_backend_reported():
    assert _core.BACKEND in ("cython", "python")


def test_unconstrained_scalar():
    # (v - 3)^2 = v^2 - 6v + 9
    sol = solve_qp(QpForm(np.array([[2.0]]), np.array([-6.0]), 9.0))
    assert sol.optimal
    assert sol.x[0] == pytest.approx(3.0, abs=1e-12)
    assert sol.optimal_cost == pytest.approx(0.0, abs=1e-12)


def test_contradictory_bounds_certified():
    qp = QpForm(np.array([[2.0]]), np.zeros(1), 0.0, g_mat=np.array([[-1.0], [1.0]]), h_vec=np.array([-1.0, 0.0]))
    sol = solve_qp(qp)
    assert sol.status == "infeasible"
    assert verify_certificate(qp, sol.certificate)


def test_inconsistent_equalities_certified():
    qp = QpForm(np.eye(2), np.zeros(2), 0.0, e_mat=np.array([[1.0, 1.0], [1.0, 1.0]]), f_vec=np.array([0.0, 1.0]))
    sol = solve_qp(qp)
    assert sol.status == "infeasible"
    assert verify_certificate(qp, sol.certificate)


def test_redundant_equalities_accepted():
    qp = QpForm(np.eye(2), np.zeros(2), 0.0, e_mat=np.array([[1.0, 1.0], [2.0, 2.0]]), f_vec=np.array([1.0, 2.0]))
    sol = solve_qp(qp)
    assert sol.optimal
    np.testing.assert_allclose(sol.x, [0.5, 0.5], atol=1e-12)


def test_bogus_certificate_rejected():
    qp = QpForm(np.eye(1), np.zeros(1), 0.0, g_mat=np.array([[1.0]]), h_vec=np.array([1.0]))
    assert not verify_certificate(qp, (np.zeros(0), np.array([1.0])))
    assert not verify_certificate(qp, (np.zeros(0), np.array([-1.0])))


def test_iteration_limit_surfaces():
    gen = np.random.default_rng(0)
    qp = random_qp(gen, 6, 8)
    with pytest.raises(IterationLimit):
        solve_qp(qp, max_iter=0)


def test_environment_forces_python_backend():
    code = "from prsmpc import _core; print(_core.BACKEND)"
    env = dict(os.environ, PRSMPC_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
