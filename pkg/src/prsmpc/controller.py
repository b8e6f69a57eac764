"""Closed-loop control laws built on the nominal MPC problem.

Both controllers apply ``u = v + K e`` with ``e = x - z``. They differ in
how the nominal state ``z(k)`` is chosen:

* SMPC-prs resets ``z(k) = x(k)`` whenever the nominal problem is
  feasible there (mode 1) and otherwise keeps the previously predicted
  ``z_1(k-1)`` (mode 2).
* SMPC-c additionally requires the reset to lower the optimal cost and
  tightens each half-space separately with a horizon-varying margin that
  follows the predicted error variance.
"""
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import BackupInfeasible, InitialInfeasible
from .numerics import normal_quantile
from .optimizer import FEAS_TOL, MpcProblem, QpSolution, rollout, sequence_cost, solve_mpc

__all__ = [
    "M1",
    "M2",
    "ControllerState",
    "StepRecord",
    "shifted_backup",
    "smpc_prs_step",
    "SmpcCDesign",
    "smpc_c_step",
]

M1 = 1
M2 = 2
COST_TIE_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class ControllerState:
    previous_predicted: Optional[np.ndarray] = None
    previous_inputs: Optional[np.ndarray] = None
    step: int = 0
    # steps since the last mode-1 reset; indexes the SMPC-c variance chain
    backup_depth: int = 0


@dataclass(frozen=True, eq=False)
class StepRecord:
    mode: int
    nominal_state: np.ndarray
    nominal_input: np.ndarray
    applied_input: np.ndarray
    error: np.ndarray
    optimal_cost: float
    predicted_states: Optional[np.ndarray] = None


def shifted_backup(previous: QpSolution, k_gain, problem: MpcProblem):
    """``[v_1*, ..., v_{N-1}*, K z_N*]`` from the previous optimal solution."""
    if not previous.optimal:
        raise ValueError("shifted backup needs an optimal previous solution")
    k_gain = np.atleast_2d(k_gain)
    tail = k_gain @ previous.nominal_states[-1]
    return np.vstack([previous.nominal_inputs[1:], tail[None, :]])


def _backup_solution(problem, z, inputs):
    states = rollout(problem.system, z, inputs)
    return QpSolution("optimal", inputs.ravel(), sequence_cost(problem, states, inputs),
                      nominal_states=states, nominal_inputs=inputs)


def _finish(state, x_k, z, sol, mode, k_gain, problem, depth):
    k_gain = np.atleast_2d(k_gain)
    e = x_k - z
    v = sol.nominal_inputs[0]
    u = v + k_gain @ e
    nxt = ControllerState(
        previous_predicted=sol.nominal_states[1].copy(),
        previous_inputs=shifted_backup(sol, k_gain, problem),
        step=state.step + 1,
        backup_depth=depth,
    )
    rec = StepRecord(mode, z.copy(), v.copy(), u, e, sol.optimal_cost, sol.nominal_states)
    return u, nxt, rec


def smpc_prs_step(state: ControllerState, x_k, problem: MpcProblem, k_gain,
                  tol=FEAS_TOL, use_shifted_backup=False):
    """One step of the feasibility-conditioned update.

    Returns ``(u, next_state, record)``. Mode 2 re-optimizes from
    ``z_1(k-1)`` unless ``use_shifted_backup`` is set, in which case the
    shifted previous sequence is applied as is.
    """
    x_k = np.asarray(x_k, dtype=float)
    sol = solve_mpc(problem, x_k, tol)
    if sol.optimal:
        return _finish(state, x_k, x_k.copy(), sol, M1, k_gain, problem, 0)
    if state.step == 0 or state.previous_predicted is None:
        raise InitialInfeasible(f"nominal problem infeasible at initial state {x_k.tolist()}")
    z = state.previous_predicted
    if use_shifted_backup:
        sol = _backup_solution(problem, z, state.previous_inputs)
    else:
        sol = solve_mpc(problem, z, tol)
        if not sol.optimal:
            raise BackupInfeasible(
                f"mode-2 problem infeasible at z={z.tolist()} (step {state.step}); "
                "recursive feasibility violated beyond tolerance"
            )
    return _finish(state, x_k, z, sol, M2, k_gain, problem, state.backup_depth + 1)


class SmpcCDesign:
    """Problem family for the SMPC-c baseline.

    Each half-space of the state and input sets is tightened separately
    at stage ``i`` by ``quantile(level) * sqrt(a Sigma_i a')`` where
    ``Sigma_i`` is the predicted error variance ``i`` steps ahead. The
    variance at prediction time is zero after a mode-1 reset and grows by
    the error recursion for every consecutive mode-2 step, so the problem
    only depends on the number of steps since the last reset; problems are
    cached by that depth.
    """

    MAX_DEPTH = 400

    def __init__(self, base: MpcProblem, a_k, k_gain, w_cov, state_level, input_level):
        self.base = base
        self.a_k = np.asarray(a_k, dtype=float)
        self.k_gain = np.atleast_2d(k_gain)
        self.w_cov = np.asarray(w_cov, dtype=float)
        self.state_level = float(state_level)
        self.input_level = float(input_level)
        self._cache = {}
        base.condensed  # build once; every depth shares it

    def error_variance(self, depth):
        n = self.a_k.shape[0]
        s = np.zeros((n, n))
        for _ in range(depth):
            s = self.a_k @ s @ self.a_k.T + self.w_cov
        return s

    def problem(self, depth) -> MpcProblem:
        # the variance chain has converged to machine precision long before this
        depth = min(depth, self.MAX_DEPTH)
        if depth in self._cache:
            return self._cache[depth]
        base = self.base
        N = base.horizon
        qx = normal_quantile(self.state_level)
        qu = normal_quantile(self.input_level)
        s = self.error_variance(depth)
        hx, hu = base.state_set.normals, base.input_set.normals
        hk = hu @ self.k_gain
        x_off = np.empty((N, hx.shape[0]))
        u_off = np.empty((N, hu.shape[0]))
        for i in range(N):
            x_off[i] = base.state_set.offsets - qx * np.sqrt(np.maximum(np.einsum("ij,jk,ik->i", hx, s, hx), 0.0))
            u_off[i] = base.input_set.offsets - qu * np.sqrt(np.maximum(np.einsum("ij,jk,ik->i", hk, s, hk), 0.0))
            s = self.a_k @ s @ self.a_k.T + self.w_cov
        prob = base.with_stage_offsets(x_off, u_off)
        self._cache[depth] = prob
        return prob


def smpc_c_step(state: ControllerState, x_k, design: SmpcCDesign, k_gain, tol=FEAS_TOL):
    """One step of the cost-decrease-conditioned baseline.

    Mode 1 requires feasibility at ``x_k`` *and*
    ``J*(x_k) <= J*(z_1(k-1))`` (ties within ``1e-9`` go to mode 1).
    """
    x_k = np.asarray(x_k, dtype=float)
    fresh = solve_mpc(design.problem(0), x_k, tol)
    if state.step == 0 or state.previous_predicted is None:
        if not fresh.optimal:
            raise InitialInfeasible(f"nominal problem infeasible at initial state {x_k.tolist()}")
        return _finish(state, x_k, x_k.copy(), fresh, M1, k_gain, design.problem(0), 0)

    depth = state.backup_depth + 1
    z = state.previous_predicted
    backup = solve_mpc(design.problem(depth), z, tol)
    if not backup.optimal:
        raise BackupInfeasible(
            f"SMPC-c backup problem infeasible at z={z.tolist()} (step {state.step}, depth {depth})"
        )
    if fresh.optimal and fresh.optimal_cost <= backup.optimal_cost + COST_TIE_TOL:
        return _finish(state, x_k, x_k.copy(), fresh, M1, k_gain, design.problem(0), 0)
    return _finish(state, x_k, z, backup, M2, k_gain, design.problem(depth), depth)
