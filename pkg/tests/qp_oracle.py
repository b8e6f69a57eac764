"""Brute-force QP solution by enumerating active sets."""
import itertools

import numpy as np

from prsmpc.optimizer import QpForm


def brute_force_qp(h, g, e_mat, f_vec, g_mat, h_vec, tol=1e-9):
    """Minimise 0.5 x'Hx + g'x s.t. Ex = f, Gx <= h by trying every active set.

    Returns ``(x, cost)`` or ``(None, inf)`` when no active set yields a
    KKT point (the problem is infeasible).
    """
    n = g.size
    meq, mineq = e_mat.shape[0], g_mat.shape[0]
    best = (None, np.inf)
    for size in range(0, min(n - meq, mineq) + 1):
        for act in itertools.combinations(range(mineq), size):
            rows = np.vstack([e_mat, g_mat[list(act)]]) if size or meq else np.zeros((0, n))
            rhs = np.concatenate([f_vec, h_vec[list(act)]])
            k = rows.shape[0]
            kkt = np.block([[h, rows.T], [rows, np.zeros((k, k))]])
            try:
                sol = np.linalg.solve(kkt, np.concatenate([-g, rhs]))
            except np.linalg.LinAlgError:
                continue
            x, lam = sol[:n], sol[n:]
            if np.any(g_mat @ x - h_vec > tol * max(1.0, np.abs(h_vec).max(initial=0.0))):
                continue
            if np.any(lam[meq:] < -tol * max(1.0, np.abs(lam).max(initial=0.0))):
                continue
            cost = 0.5 * x @ h @ x + g @ x
            if cost < best[1]:
                best = (x, cost)
    return best


def random_qp(gen, n_var, n_in, n_eq=0):
    """Random strictly convex QP; the inequality count stays small enough to enumerate."""
    m = gen.standard_normal((n_var, n_var))
    h = m @ m.T + 0.5 * np.eye(n_var)
    g = gen.standard_normal(n_var) * 3
    g_mat = gen.standard_normal((n_in, n_var))
    # keep a known interior point so most problems are feasible
    x_feas = gen.standard_normal(n_var)
    h_vec = g_mat @ x_feas + gen.uniform(-0.5, 1.0, n_in)
    e_mat = gen.standard_normal((n_eq, n_var))
    f_vec = e_mat @ x_feas
    return QpForm(h, g, 0.0, e_mat, f_vec, g_mat, h_vec)


def random_qp_cases(count=100, seed=1234):
    gen = np.random.default_rng(seed)
    out = []
    for i in range(count):
        n_var = int(gen.integers(1, 21))
        n_in = int(gen.integers(0, 9))
        n_eq = int(gen.integers(0, min(2, n_var) + 1)) if i % 3 == 0 else 0
        out.append(random_qp(gen, n_var, n_in, n_eq))
    return out
