"""Pure-Python dual active-set QP kernel (Goldfarb-Idnani).

Solves::

    min 0.5 x'Hx + g'x   s.t.  E x = f,  G x <= h

given ``J = L^{-T}`` where ``H = L L'``. This module is the fallback used
when the compiled ``_qpcore`` extension is unavailable; both expose the
same ``dual_active_set`` signature and must agree to rounding.

Status codes: 0 optimal, 1 infeasible, 2 iteration limit.
"""
import math

import numpy as np

OPTIMAL = 0
INFEASIBLE = 1
ITERATION_LIMIT = 2


def dual_active_set(j0, g, e_mat, f_vec, g_mat, h_vec, tol, max_iter):
    """Run the dual method.

    Returns
    -------
    status : int
    x : ndarray
        Primal iterate (the minimizer when status is optimal).
    mult_eq, mult_in : ndarray
        Lagrange multipliers when optimal; a Farkas certificate
        ``(mu, lam)`` with ``G'lam + E'mu = 0``, ``lam >= 0`` and
        ``h'lam + f'mu < 0`` when infeasible.
    iterations : int
    """
    n = j0.shape[0]
    meq = e_mat.shape[0]
    mineq = g_mat.shape[0]
    # internal convention: rows n_i . x >= b_i
    normals = np.vstack([e_mat, -g_mat]) if meq + mineq else np.zeros((0, n))
    rhs = np.concatenate([f_vec, -h_vec])
    sign = np.ones(meq + mineq)

    jm = np.array(j0, dtype=float, copy=True)
    rm = np.zeros((n, n))
    x = -jm @ (jm.T @ g)
    active = []
    u = []
    is_active = np.zeros(meq + mineq, dtype=bool)
    mult_eq = np.zeros(meq)
    mult_in = np.zeros(mineq)

    iterations = 0
    while True:
        # pick the next constraint: pending equalities first, then the most violated row
        p = -1
        for i in range(meq):
            if not is_active[i]:
                p = i
                s = float(normals[i] @ x - rhs[i])
                if s > 0.0:
                    sign[i] = -1.0
                    s = -s
                break
        if p < 0 and mineq:
            slack = normals[meq:] @ x - rhs[meq:]
            slack[is_active[meq:]] = 0.0
            k = int(np.argmin(slack))
            if slack[k] < -tol:
                p = meq + k
                s = float(slack[k])
        if p < 0:
            q = len(active)
            for pos, idx in enumerate(active):
                if idx < meq:
                    mult_eq[idx] = -u[pos] * sign[idx]
                else:
                    mult_in[idx - meq] = u[pos]
            return OPTIMAL, x, mult_eq, mult_in, iterations

        np_vec = sign[p] * normals[p]
        bp = sign[p] * rhs[p]
        u_new = 0.0

        while True:
            iterations += 1
            if iterations > max_iter:
                return ITERATION_LIMIT, x, mult_eq, mult_in, iterations
            q = len(active)
            d = jm.T @ np_vec
            d2 = d[q:]
            z = jm[:, q:] @ d2
            zn = float(d2 @ d2)
            if q:
                r = _back_substitute(rm, d, q)
            else:
                r = np.zeros(0)

            t1 = math.inf
            drop = -1
            for pos in range(q):
                if active[pos] >= meq and r[pos] > 0.0:
                    ratio = u[pos] / r[pos]
                    if ratio < t1:
                        t1 = ratio
                        drop = pos
            dd = float(d @ d)
            if zn <= 1e-24 * dd or dd == 0.0:
                t2 = math.inf
            else:
                t2 = -s / zn

            t = min(t1, t2)
            if math.isinf(t2) and p < meq and abs(s) <= tol:
                # redundant equality already satisfied: nothing to add
                is_active[p] = True
                break
            if math.isinf(t):
                # n_p = N_A r with r <= 0 on inequalities: Farkas certificate
                cert_eq = np.zeros(meq)
                cert_in = np.zeros(mineq)
                _put_cert(p, 1.0, meq, sign, cert_eq, cert_in)
                for pos, idx in enumerate(active):
                    _put_cert(idx, -r[pos], meq, sign, cert_eq, cert_in)
                return INFEASIBLE, x, cert_eq, cert_in, iterations

            if math.isinf(t2):
                for pos in range(q):
                    u[pos] -= t * r[pos]
                u_new += t
                is_active[active[drop]] = False
                _drop(jm, rm, active, u, drop)
                continue

            x = x + t * z
            for pos in range(q):
                u[pos] -= t * r[pos]
            u_new += t
            if t == t2:
                _add(jm, rm, jm.T @ np_vec, q)
                active.append(p)
                u.append(u_new)
                is_active[p] = True
                break
            is_active[active[drop]] = False
            _drop(jm, rm, active, u, drop)
            s = float(np_vec @ x - bp)


def _put_cert(idx, weight, meq, sign, cert_eq, cert_in):
    if idx < meq:
        cert_eq[idx] = -weight * sign[idx]
    else:
        cert_in[idx - meq] = weight


def _back_substitute(rm, d, q):
    r = np.empty(q)
    for i in range(q - 1, -1, -1):
        r[i] = (d[i] - rm[i, i + 1:q] @ r[i + 1:q]) / rm[i, i]
    return r


def _givens(a, b):
    h = math.hypot(a, b)
    if h == 0.0:
        return 1.0, 0.0, 0.0
    return a / h, b / h, h


def _add(jm, rm, d, q):
    n = jm.shape[0]
    d = d.copy()
    for i in range(n - 1, q, -1):
        if d[i] == 0.0:
            continue
        c, s, h = _givens(d[i - 1], d[i])
        d[i - 1] = h
        d[i] = 0.0
        ji = jm[:, i - 1].copy()
        jm[:, i - 1] = c * ji + s * jm[:, i]
        jm[:, i] = -s * ji + c * jm[:, i]
    rm[: q + 1, q] = d[: q + 1]


def _drop(jm, rm, active, u, pos):
    q = len(active)
    rm[:, pos : q - 1] = rm[:, pos + 1 : q]
    rm[:, q - 1] = 0.0
    for i in range(pos, q - 1):
        c, s, h = _givens(rm[i, i], rm[i + 1, i])
        if s == 0.0:
            continue
        ri = rm[i, i:q - 1].copy()
        rm[i, i:q - 1] = c * ri + s * rm[i + 1, i:q - 1]
        rm[i + 1, i:q - 1] = -s * ri + c * rm[i + 1, i:q - 1]
        rm[i + 1, i] = 0.0
        ji = jm[:, i].copy()
        jm[:, i] = c * ji + s * jm[:, i + 1]
        jm[:, i + 1] = -s * ji + c * jm[:, i + 1]
    del active[pos]
    del u[pos]
