"""Nominal finite-horizon MPC as a condensed, strictly convex QP.

The decision vector stacks the nominal inputs ``v_0 ... v_{N-1}``; the
nominal states are eliminated through ``z_{i+1} = A z_i + B v_i``. Only
the linear term and the constraint right-hand sides depend on the
initial state, so everything else (including the inverse Cholesky factor
used by the dual active-set kernel) is computed once per problem.
"""
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import linprog

from . import _core
from .errors import IterationLimit
from .numerics import as_matrix, lqr_gain, spectral_radius
from .reachability import Polytope

__all__ = [
    "LinearSystem",
    "MpcProblem",
    "QpForm",
    "QpSolution",
    "build_qp",
    "solve_qp",
    "solve_mpc",
    "is_feasible",
    "kkt_residuals",
    "verify_certificate",
    "terminal_cost_from_lqr",
    "maximal_invariant_terminal_set",
    "polytope_contains",
    "rollout",
    "sequence_cost",
]

FEAS_TOL = 1e-6


@dataclass(frozen=True, eq=False)
class LinearSystem:
    a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        a = as_matrix(self.a, "A")
        b = as_matrix(self.b, "B")
        if a.shape[0] != a.shape[1] or b.shape[0] != a.shape[0]:
            raise ValueError(f"incompatible A {a.shape} and B {b.shape}")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    @property
    def n(self):
        return self.a.shape[0]

    @property
    def m(self):
        return self.b.shape[1]

    def step(self, x, u, w=0.0):
        return self.a @ x + self.b @ u + w


def _is_pd(m):
    try:
        np.linalg.cholesky(0.5 * (m + m.T))
        return True
    except np.linalg.LinAlgError:
        return False


class _Condensed:
    """z0-independent pieces of the condensed QP."""

    def __init__(self, system, horizon, q, r, qf):
        n, m, N = system.n, system.m, horizon
        a, b = system.a, system.b
        phi = np.zeros(((N + 1) * n, n))
        gam = np.zeros(((N + 1) * n, N * m))
        phi[:n] = np.eye(n)
        for i in range(1, N + 1):
            rows = slice(i * n, (i + 1) * n)
            prev = slice((i - 1) * n, i * n)
            phi[rows] = a @ phi[prev]
            gam[rows] = a @ gam[prev]
            gam[rows, (i - 1) * m : i * m] = b
        qbar = np.zeros(((N + 1) * n, (N + 1) * n))
        for i in range(N):
            qbar[i * n : (i + 1) * n, i * n : (i + 1) * n] = q
        qbar[N * n :, N * n :] = qf
        rbar = np.kron(np.eye(N), r)
        self.phi = phi
        self.gamma = gam
        self.hessian = 2.0 * (gam.T @ qbar @ gam + rbar)
        self.hessian = 0.5 * (self.hessian + self.hessian.T)
        self.lin = 2.0 * gam.T @ qbar @ phi
        self.const = phi.T @ qbar @ phi
        self.chol_inv = np.linalg.inv(np.linalg.cholesky(self.hessian)).T


class MpcProblem:
    """Nominal MPC problem data.

    ``state_set`` and ``input_set`` apply to stages ``0 .. N-1`` and
    ``terminal_set`` to ``z_N``. Optional per-stage offset arrays of
    shape ``(N, faces)`` replace the set offsets stage by stage, which is
    how horizon-varying tightening is expressed.
    """

    def __init__(self, system, horizon, q, r, qf, state_set, input_set, terminal_set,
                 state_offsets=None, input_offsets=None, *, check=True):
        self.system = system
        self.horizon = int(horizon)
        self.q = as_matrix(q, "Q")
        self.r = as_matrix(r, "R")
        self.qf = as_matrix(qf, "Q_f")
        self.state_set = state_set
        self.input_set = input_set
        self.terminal_set = terminal_set
        N = self.horizon
        self.state_offsets = (
            np.tile(state_set.offsets, (N, 1)) if state_offsets is None
            else np.asarray(state_offsets, dtype=float).reshape(N, state_set.n_faces)
        )
        self.input_offsets = (
            np.tile(input_set.offsets, (N, 1)) if input_offsets is None
            else np.asarray(input_offsets, dtype=float).reshape(N, input_set.n_faces)
        )
        self._condensed = None
        if check:
            self._validate()

    def _validate(self):
        n, m = self.system.n, self.system.m
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1")
        for name, mat, dim in (("Q", self.q, n), ("R", self.r, m), ("Q_f", self.qf, n)):
            if mat.shape != (dim, dim):
                raise ValueError(f"{name} must be {dim}x{dim}, got {mat.shape}")
            if not _is_pd(mat):
                raise ValueError(f"{name} must be positive definite")
        if self.state_set.dim != n or self.terminal_set.dim != n or self.input_set.dim != m:
            raise ValueError("constraint set dimensions do not match the system")
        if not polytope_contains(self.state_set, self.terminal_set):
            raise ValueError("terminal set is not contained in the state constraint set")

    @property
    def condensed(self):
        if self._condensed is None:
            self._condensed = _Condensed(self.system, self.horizon, self.q, self.r, self.qf)
        return self._condensed

    def with_stage_offsets(self, state_offsets=None, input_offsets=None):
        """Copy sharing the condensed matrices but with new per-stage offsets."""
        out = MpcProblem(self.system, self.horizon, self.q, self.r, self.qf,
                         self.state_set, self.input_set, self.terminal_set,
                         self.state_offsets if state_offsets is None else state_offsets,
                         self.input_offsets if input_offsets is None else input_offsets,
                         check=False)
        out._condensed = self._condensed
        return out


@dataclass(eq=False)
class QpForm:
    """``min 0.5 x'Hx + g'x + c  s.t.  E x = f, G x <= h``."""

    hessian: np.ndarray
    g: np.ndarray
    const: float = 0.0
    e_mat: Optional[np.ndarray] = None
    f_vec: Optional[np.ndarray] = None
    g_mat: Optional[np.ndarray] = None
    h_vec: Optional[np.ndarray] = None
    chol_inv: Optional[np.ndarray] = None
    # reconstruction data for MPC problems
    z0: Optional[np.ndarray] = None
    problem: Optional[MpcProblem] = None

    def __post_init__(self):
        n = self.g.size
        if self.e_mat is None:
            self.e_mat, self.f_vec = np.zeros((0, n)), np.zeros(0)
        if self.g_mat is None:
            self.g_mat, self.h_vec = np.zeros((0, n)), np.zeros(0)

    def objective(self, x):
        return float(0.5 * x @ self.hessian @ x + self.g @ x + self.const)


@dataclass(eq=False)
class QpSolution:
    status: str  # "optimal" | "infeasible" | "error"
    x: np.ndarray
    optimal_cost: float = math.nan
    nominal_states: Optional[np.ndarray] = None
    nominal_inputs: Optional[np.ndarray] = None
    mult_eq: Optional[np.ndarray] = None
    mult_in: Optional[np.ndarray] = None
    certificate: Optional[tuple] = None
    iterations: int = 0

    @property
    def optimal(self):
        return self.status == "optimal"


def _terminal_split(terminal):
    """Split opposing row pairs with cancelling offsets into equalities."""
    a, h = terminal.normals, terminal.offsets
    used = np.zeros(len(h), dtype=bool)
    eq_rows, eq_rhs = [], []
    for i in range(len(h)):
        if used[i]:
            continue
        for j in range(i + 1, len(h)):
            if not used[j] and np.array_equal(a[i], -a[j]) and h[i] == -h[j]:
                used[i] = used[j] = True
                eq_rows.append(a[i])
                eq_rhs.append(h[i])
                break
    ineq = ~used
    n = terminal.dim
    return (np.array(eq_rows).reshape(-1, n), np.array(eq_rhs, dtype=float),
            a[ineq], h[ineq])


def build_qp(problem: MpcProblem, z0) -> QpForm:
    """Condense the nominal MPC problem at initial state ``z0``.

    Constraint rows appear in the order: state faces for stages 0..N-1,
    input faces for stages 0..N-1, terminal inequality faces. Stage-0
    state rows do not involve the decision variables; they make the QP
    infeasible exactly when ``z0`` violates the tightened state set.
    """
    z0 = np.asarray(z0, dtype=float).ravel()
    c = problem.condensed
    n, m, N = problem.system.n, problem.system.m, problem.horizon
    free = c.phi @ z0

    hx, hu = problem.state_set.normals, problem.input_set.normals
    blocks, rhs = [], []
    for i in range(N):
        if hx.shape[0]:
            blocks.append(hx @ c.gamma[i * n : (i + 1) * n])
            rhs.append(problem.state_offsets[i] - hx @ free[i * n : (i + 1) * n])
    for i in range(N):
        if hu.shape[0]:
            row = np.zeros((hu.shape[0], N * m))
            row[:, i * m : (i + 1) * m] = hu
            blocks.append(row)
            rhs.append(problem.input_offsets[i])
    eq_a, eq_h, in_a, in_h = _terminal_split(problem.terminal_set)
    gam_n = c.gamma[N * n :]
    free_n = free[N * n :]
    if in_a.shape[0]:
        blocks.append(in_a @ gam_n)
        rhs.append(in_h - in_a @ free_n)
    g_mat = np.vstack(blocks) if blocks else np.zeros((0, N * m))
    h_vec = np.concatenate(rhs) if rhs else np.zeros(0)
    e_mat = eq_a @ gam_n
    f_vec = eq_h - eq_a @ free_n

    return QpForm(
        hessian=c.hessian,
        g=c.lin @ z0,
        const=float(z0 @ c.const @ z0),
        e_mat=e_mat,
        f_vec=f_vec,
        g_mat=g_mat,
        h_vec=h_vec,
        chol_inv=c.chol_inv,
        z0=z0,
        problem=problem,
    )


def solve_qp(qp: QpForm, tol=FEAS_TOL, max_iter=None) -> QpSolution:
    """Solve a strictly convex QP with the dual active-set kernel.

    Returns status ``"optimal"`` with multipliers, or ``"infeasible"``
    with a Farkas certificate ``(mu, lam)``. Raises
    :class:`IterationLimit` rather than guessing a status.
    """
    j0 = qp.chol_inv
    if j0 is None:
        j0 = np.linalg.inv(np.linalg.cholesky(qp.hessian)).T
        qp.chol_inv = j0
    n = qp.g.size
    if max_iter is None:
        max_iter = 50 * (n + qp.g_mat.shape[0] + qp.e_mat.shape[0]) + 100
    status, x, m_eq, m_in, iters = _core.dual_active_set(
        j0, qp.g, qp.e_mat, qp.f_vec, qp.g_mat, qp.h_vec, float(tol), int(max_iter)
    )
    x = np.asarray(x)
    if status == _core.ITERATION_LIMIT:
        raise IterationLimit(f"dual active-set solver exceeded {max_iter} iterations")
    if status == _core.INFEASIBLE:
        return QpSolution("infeasible", x, certificate=(np.asarray(m_eq), np.asarray(m_in)), iterations=iters)
    sol = QpSolution("optimal", x, qp.objective(x), mult_eq=np.asarray(m_eq),
                     mult_in=np.asarray(m_in), iterations=iters)
    if qp.problem is not None:
        sol.nominal_inputs, sol.nominal_states = _unstack(qp.problem, qp.z0, x)
    return sol


def _unstack(problem, z0, x):
    n, m, N = problem.system.n, problem.system.m, problem.horizon
    inputs = x.reshape(N, m)
    states = (problem.condensed.phi @ z0 + problem.condensed.gamma @ x).reshape(N + 1, n)
    return inputs, states


def solve_mpc(problem: MpcProblem, z0, tol=FEAS_TOL) -> QpSolution:
    return solve_qp(build_qp(problem, z0), tol=tol)


def is_feasible(problem: MpcProblem, z0, tol=FEAS_TOL) -> bool:
    """Decide feasibility of the nominal problem at ``z0``.

    The dual active-set method either terminates with a primal point
    satisfying every row to ``tol`` or exhibits a Farkas certificate, so
    its status is the feasibility verdict.
    """
    return solve_mpc(problem, z0, tol).optimal


# -- independent checks ------------------------------------------------------------

def kkt_residuals(qp: QpForm, x, mult_eq, mult_in) -> dict:
    """KKT residuals of ``(x, mult)``, computed without touching the solver."""
    x = np.asarray(x, dtype=float)
    stat = qp.hessian @ x + qp.g + qp.g_mat.T @ mult_in + qp.e_mat.T @ mult_eq
    slack = qp.g_mat @ x - qp.h_vec
    eq = qp.e_mat @ x - qp.f_vec
    return {
        "stationarity": float(np.abs(stat).max(initial=0.0)),
        "primal": float(max(np.max(slack, initial=0.0), np.abs(eq).max(initial=0.0))),
        "dual": float(max(0.0, -np.min(mult_in, initial=0.0))),
        "complementarity": float(np.abs(mult_in * slack).max(initial=0.0)),
    }


def verify_certificate(qp: QpForm, certificate, tol=1e-6) -> bool:
    """Check a Farkas certificate ``G'lam + E'mu = 0, lam >= 0, h'lam + f'mu < 0``.

    The certificate is scaled so the gap ``-(h'lam + f'mu)`` equals one;
    the remaining residual must then be below ``tol`` relative to the
    row scale.
    """
    mu, lam = certificate
    gap = -(qp.h_vec @ lam + qp.f_vec @ mu)
    if not gap > 0 or np.min(lam, initial=0.0) < 0:
        return False
    mu, lam = mu / gap, lam / gap
    combo = qp.g_mat.T @ lam + qp.e_mat.T @ mu
    scale = max(1.0, float(np.abs(qp.g_mat).max(initial=0.0)), float(np.abs(qp.e_mat).max(initial=0.0)))
    return float(np.abs(combo).max(initial=0.0)) <= tol * scale * max(1.0, float(np.abs(lam).sum() + np.abs(mu).sum()))


def rollout(system, z0, inputs):
    z = [np.asarray(z0, dtype=float)]
    for v in inputs:
        z.append(system.a @ z[-1] + system.b @ v)
    return np.array(z)


def sequence_cost(problem, states, inputs):
    """Objective of the nominal problem for an explicit trajectory."""
    cost = 0.0
    for z, v in zip(states[:-1], inputs):
        cost += z @ problem.q @ z + v @ problem.r @ v
    return float(cost + states[-1] @ problem.qf @ states[-1])


# -- terminal ingredients ------------------------------------------------------------

def terminal_cost_from_lqr(system: LinearSystem, q, r):
    """Terminal weight equal to the LQR Riccati solution."""
    _, p = lqr_gain(system.a, system.b, q, r)
    return p


def _lp_max(c, poly):
    res = linprog(-c, A_ub=poly.normals, b_ub=poly.offsets, bounds=[(None, None)] * poly.dim, method="highs")
    if res.status == 3:
        return math.inf
    if res.status != 0:
        raise RuntimeError(f"LP failed: {res.message}")
    return -res.fun


def polytope_contains(outer: Polytope, inner: Polytope, tol=1e-9) -> bool:
    """LP containment test ``inner`` subset of ``outer``."""
    for row, off in zip(outer.normals, outer.offsets):
        if not np.any(row):
            if off < -tol:
                return False
            continue
        if _lp_max(row, inner) > off + tol:
            return False
    return True


def maximal_invariant_terminal_set(a_k, state_set: Polytope, input_rows_for_k: Polytope,
                                   max_iter=500, tol=1e-8) -> Polytope:
    """Maximal positively invariant subset of ``state_set`` intersected with
    ``input_rows_for_k`` (the input constraints written in state coordinates)
    under ``z+ = a_k z``.

    Rows ``c a_k^t z <= h`` are appended for ``t = 1, 2, ...`` until all
    new rows are redundant by LP.
    """
    a = as_matrix(a_k, "a_k")
    if spectral_radius(a) >= 1.0:
        raise ValueError("a_k must be stable")
    base_a = np.vstack([state_set.normals, input_rows_for_k.normals])
    base_h = np.concatenate([state_set.offsets, input_rows_for_k.offsets])
    current = Polytope(base_a, base_h)
    power = np.eye(a.shape[0])
    for _ in range(max_iter):
        power = power @ a
        cand = base_a @ power
        new_rows, new_h = [], []
        for row, off in zip(cand, base_h):
            if not np.any(np.abs(row) > 1e-14):
                continue
            if _lp_max(row, current) > off + tol:
                new_rows.append(row)
                new_h.append(off)
        if not new_rows:
            return _prune(current, tol)
        current = Polytope(np.vstack([current.normals, new_rows]), np.concatenate([current.offsets, new_h]))
    raise IterationLimit(f"invariant set not finitely determined within {max_iter} iterations")


def _prune(poly, tol):
    keep = list(range(poly.n_faces))
    for i in range(poly.n_faces):
        others = [j for j in keep if j != i]
        if not others:
            continue
        sub = Polytope(poly.normals[others], poly.offsets[others])
        if _lp_max(poly.normals[i], sub) <= poly.offsets[i] + tol:
            keep = others
    return Polytope(poly.normals[keep], poly.offsets[keep])


def feasible_set_bounded(problem: MpcProblem) -> bool:
    """Sufficient check that the set of feasible initial states is bounded.

    Holds when the terminal and input sets are bounded and ``A`` is
    invertible, because ``z_0`` is then an affine image of ``(z_N, V)``.
    """
    if abs(np.linalg.det(problem.system.a)) < 1e-12:
        return False
    for poly in (problem.terminal_set, problem.input_set):
        for i in range(poly.dim):
            e = np.eye(poly.dim)[i]
            if math.isinf(_lp_max(e, poly)) or math.isinf(_lp_max(-e, poly)):
                return False
    return True
