# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled dual active-set QP kernel.

Line-for-line port of :mod:`prsmpc._core.qp_py`; see that module for the
algorithm description and return convention.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fabs, INFINITY, isinf

cnp.import_array()


cdef inline void _givens(double a, double b, double* c, double* s, double* h) noexcept nogil:
    cdef double hh = sqrt(a * a + b * b)
    if hh == 0.0:
        c[0] = 1.0
        s[0] = 0.0
        h[0] = 0.0
    else:
        c[0] = a / hh
        s[0] = b / hh
        h[0] = hh


cdef void _rot_cols(double[:, ::1] jm, Py_ssize_t i, Py_ssize_t k, double c, double s) noexcept nogil:
    cdef Py_ssize_t row
    cdef double a, b
    for row in range(jm.shape[0]):
        a = jm[row, i]
        b = jm[row, k]
        jm[row, i] = c * a + s * b
        jm[row, k] = -s * a + c * b


def dual_active_set(j0, g, e_mat, f_vec, g_mat, h_vec, double tol, long max_iter):
    cdef Py_ssize_t n = j0.shape[0]
    cdef Py_ssize_t meq = e_mat.shape[0]
    cdef Py_ssize_t mineq = g_mat.shape[0]
    cdef Py_ssize_t mtot = meq + mineq

    cdef double[:, ::1] normals = np.ascontiguousarray(
        np.vstack([np.asarray(e_mat, dtype=float).reshape(meq, n),
                   -np.asarray(g_mat, dtype=float).reshape(mineq, n)]))
    cdef double[::1] rhs = np.ascontiguousarray(
        np.concatenate([np.asarray(f_vec, dtype=float).ravel(),
                        -np.asarray(h_vec, dtype=float).ravel()]))
    cdef double[::1] sign = np.ones(mtot)
    cdef double[:, ::1] jm = np.array(j0, dtype=float, order="C", copy=True)
    cdef double[:, ::1] rm = np.zeros((n, n))
    cdef double[::1] gv = np.ascontiguousarray(np.asarray(g, dtype=float).ravel())
    x_arr = np.zeros(n)
    cdef double[::1] x = x_arr
    cdef double[::1] d = np.zeros(n)
    cdef double[::1] z = np.zeros(n)
    cdef double[::1] r = np.zeros(n)
    cdef double[::1] u = np.zeros(n)
    cdef double[::1] npv = np.zeros(n)
    cdef double[::1] tmp = np.zeros(n)
    cdef Py_ssize_t[::1] active = np.zeros(n, dtype=np.intp)
    cdef char[::1] is_active = np.zeros(mtot, dtype=np.int8)
    mult_eq_arr = np.zeros(meq)
    mult_in_arr = np.zeros(mineq)
    cdef double[::1] mult_eq = mult_eq_arr
    cdef double[::1] mult_in = mult_in_arr

    cdef Py_ssize_t i, k, row, col, p, q = 0, pos, drop, idx
    cdef long iterations = 0
    cdef double s = 0.0, bp, u_new, t, t1, t2, zn, dd, acc, c, sn, hh, ratio, best, a, b, weight

    # x = -J J' g
    for k in range(n):
        acc = 0.0
        for row in range(n):
            acc += jm[row, k] * gv[row]
        tmp[k] = acc
    for row in range(n):
        acc = 0.0
        for k in range(n):
            acc += jm[row, k] * tmp[k]
        x[row] = -acc

    while True:
        p = -1
        for i in range(meq):
            if not is_active[i]:
                p = i
                acc = 0.0
                for k in range(n):
                    acc += normals[i, k] * x[k]
                s = acc - rhs[i]
                if s > 0.0:
                    sign[i] = -1.0
                    s = -s
                break
        if p < 0 and mineq > 0:
            best = 0.0
            for i in range(meq, mtot):
                if is_active[i]:
                    continue
                acc = 0.0
                for k in range(n):
                    acc += normals[i, k] * x[k]
                acc -= rhs[i]
                if p < 0 or acc < best:
                    best = acc
                    p = i
            if p >= 0 and best < -tol:
                s = best
            else:
                p = -1
        if p < 0:
            for pos in range(q):
                idx = active[pos]
                if idx < meq:
                    mult_eq[idx] = -u[pos] * sign[idx]
                else:
                    mult_in[idx - meq] = u[pos]
            return 0, x_arr, mult_eq_arr, mult_in_arr, iterations

        for k in range(n):
            npv[k] = sign[p] * normals[p, k]
        bp = sign[p] * rhs[p]
        u_new = 0.0

        while True:
            iterations += 1
            if iterations > max_iter:
                return 2, x_arr, mult_eq_arr, mult_in_arr, iterations
            # d = J' n_p
            for col in range(n):
                acc = 0.0
                for row in range(n):
                    acc += jm[row, col] * npv[row]
                d[col] = acc
            zn = 0.0
            dd = 0.0
            for k in range(n):
                dd += d[k] * d[k]
                if k >= q:
                    zn += d[k] * d[k]
            for row in range(n):
                acc = 0.0
                for k in range(q, n):
                    acc += jm[row, k] * d[k]
                z[row] = acc
            for i in range(q - 1, -1, -1):
                acc = d[i]
                for k in range(i + 1, q):
                    acc -= rm[i, k] * r[k]
                r[i] = acc / rm[i, i]

            t1 = INFINITY
            drop = -1
            for pos in range(q):
                if active[pos] >= meq and r[pos] > 0.0:
                    ratio = u[pos] / r[pos]
                    if ratio < t1:
                        t1 = ratio
                        drop = pos
            if zn <= 1e-24 * dd or dd == 0.0:
                t2 = INFINITY
            else:
                t2 = -s / zn
            t = t1 if t1 < t2 else t2

            if isinf(t2) and p < meq and fabs(s) <= tol:
                # redundant equality already satisfied: nothing to add
                is_active[p] = 1
                break

            if isinf(t):
                cert_eq = np.zeros(meq)
                cert_in = np.zeros(mineq)
                for pos in range(-1, q):
                    if pos < 0:
                        idx = p
                        weight = 1.0
                    else:
                        idx = active[pos]
                        weight = -r[pos]
                    if idx < meq:
                        cert_eq[idx] = -weight * sign[idx]
                    else:
                        cert_in[idx - meq] = weight
                return 1, x_arr, cert_eq, cert_in, iterations

            if not isinf(t2):
                for k in range(n):
                    x[k] += t * z[k]
            for pos in range(q):
                u[pos] -= t * r[pos]
            u_new += t

            if (not isinf(t2)) and t == t2:
                # add p: rotate d so that entries below q vanish
                for i in range(n - 1, q, -1):
                    if d[i] == 0.0:
                        continue
                    _givens(d[i - 1], d[i], &c, &sn, &hh)
                    d[i - 1] = hh
                    d[i] = 0.0
                    _rot_cols(jm, i - 1, i, c, sn)
                for k in range(q + 1):
                    rm[k, q] = d[k]
                active[q] = p
                u[q] = u_new
                q += 1
                is_active[p] = 1
                break

            # drop the blocking constraint
            is_active[active[drop]] = 0
            for col in range(drop, q - 1):
                for row in range(n):
                    rm[row, col] = rm[row, col + 1]
            for row in range(n):
                rm[row, q - 1] = 0.0
            for i in range(drop, q - 1):
                _givens(rm[i, i], rm[i + 1, i], &c, &sn, &hh)
                if sn == 0.0:
                    continue
                for col in range(i, q - 1):
                    a = rm[i, col]
                    b = rm[i + 1, col]
                    rm[i, col] = c * a + sn * b
                    rm[i + 1, col] = -sn * a + c * b
                rm[i + 1, i] = 0.0
                _rot_cols(jm, i, i + 1, c, sn)
            for pos in range(drop, q - 1):
                active[pos] = active[pos + 1]
                u[pos] = u[pos + 1]
            q -= 1
            if not isinf(t2):
                acc = 0.0
                for k in range(n):
                    acc += npv[k] * x[k]
                s = acc - bp
