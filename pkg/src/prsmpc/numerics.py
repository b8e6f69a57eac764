"""Dense linear-algebra kernels and scalar special functions.

Everything here is a pure function of its inputs. Dimensions are small
(a handful of states), so the iterations below favour robustness and an
explicit, testable stopping rule over raw speed.
"""
import math

import numpy as np

from .errors import CholeskyFailure, DomainError, NonConvergent

__all__ = [
    "as_matrix",
    "spectral_radius",
    "solve_discrete_lyapunov",
    "lyapunov_residual",
    "lqr_gain",
    "dare_residual",
    "lyapunov_certificate",
    "min_eigenvalue",
    "normal_cdf",
    "normal_quantile",
    "chi2_cdf",
    "chi2_quantile",
    "psd_factor",
]

_LYAP_MAX_DOUBLINGS = 80
_DARE_MAX_ITER = 10_000


def as_matrix(a, name="matrix"):
    """Return ``a`` as a finite 2-D float array (scalars and vectors promoted)."""
    m = np.atleast_2d(np.asarray(a, dtype=float))
    if m.ndim != 2:
        raise ValueError(f"{name} must be two-dimensional, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name} has non-finite entries")
    return m


def _sym(m):
    return 0.5 * (m + m.T)


def spectral_radius(a):
    return float(np.max(np.abs(np.linalg.eigvals(as_matrix(a)))))


def lyapunov_residual(a_k, sigma, w):
    """Infinity norm of ``a_k sigma a_k^T - sigma + w``."""
    return float(np.abs(a_k @ sigma @ a_k.T - sigma + w).max())


def solve_discrete_lyapunov(a_k, w):
    """Solve ``a_k S a_k^T - S + w = 0`` by the doubling iteration.

    Each pass doubles the number of accumulated terms of the series
    ``sum_i a_k^i w (a_k^T)^i``, so convergence is quadratic whenever the
    spectral radius of ``a_k`` is below one.

    Parameters
    ----------
    a_k : array_like, shape (n, n)
        Stable closed-loop matrix.
    w : array_like, shape (n, n)
        Symmetric positive semidefinite forcing term.

    Returns
    -------
    ndarray, shape (n, n)
        The stationary covariance.

    Raises
    ------
    NonConvergent
        If the iteration does not contract, which signals an unstable ``a_k``.
    """
    a = as_matrix(a_k, "a_k")
    w = _sym(as_matrix(w, "w"))
    n = a.shape[0]
    if a.shape != (n, n) or w.shape != (n, n):
        raise ValueError(f"shape mismatch: a_k {a.shape}, w {w.shape}")

    sigma = w.copy()
    ak = a.copy()
    # an unstable a_k overflows; that is detected below, not warned about
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(_LYAP_MAX_DOUBLINGS):
            step = ak @ sigma @ ak.T
            sigma = _sym(sigma + step)
            if not np.all(np.isfinite(sigma)):
                break
            scale = max(1.0, float(np.abs(sigma).max()))
            if float(np.abs(step).max()) <= 1e-14 * scale and float(np.abs(ak).max()) < 1.0:
                break
            ak = ak @ ak
        else:
            raise NonConvergent("Lyapunov doubling did not converge; is a_k stable?")
    if not np.all(np.isfinite(sigma)):
        raise NonConvergent("Lyapunov doubling diverged; a_k is not stable")

    # one refinement sweep removes the accumulated rounding of the doubling
    for _ in range(3):
        resid = a @ sigma @ a.T - sigma + w
        if float(np.abs(resid).max()) <= 1e-13 * max(1.0, float(np.abs(w).max())):
            break
        corr = resid
        ak = a.copy()
        for _ in range(_LYAP_MAX_DOUBLINGS):
            step = ak @ corr @ ak.T
            corr = _sym(corr + step)
            if float(np.abs(step).max()) <= 1e-16 * max(1.0, float(np.abs(corr).max())):
                break
            ak = ak @ ak
        sigma = _sym(sigma + corr)
    return sigma


def dare_residual(a, b, q, r, p):
    """Infinity norm of the discrete algebraic Riccati residual at ``p``."""
    btp = b.T @ p
    rhs = q + a.T @ p @ a - a.T @ p @ b @ np.linalg.solve(r + btp @ b, btp @ a)
    return float(np.abs(rhs - p).max())


def lqr_gain(a, b, q, r):
    """Infinite-horizon discrete LQR gain and cost matrix.

    The Riccati equation is solved with the structured doubling algorithm,
    i.e. value iteration accelerated by squaring, followed by a couple of
    plain value-iteration sweeps to polish the residual.

    Returns
    -------
    k_gain : ndarray, shape (m, n)
        Feedback gain for ``u = k_gain @ x``.
    p_cost : ndarray, shape (n, n)
        Riccati solution.
    """
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    q = _sym(as_matrix(q, "q"))
    r = _sym(as_matrix(r, "r"))
    n, m = b.shape
    if a.shape != (n, n) or q.shape != (n, n) or r.shape != (m, m):
        raise ValueError("inconsistent dimensions for lqr_gain")

    eye = np.eye(n)
    ak = a.copy()
    g = b @ np.linalg.solve(r, b.T)
    h = q.copy()
    for _ in range(_DARE_MAX_ITER):
        inv = np.linalg.solve(eye + g @ h, np.hstack([ak, g]))
        w_a, w_g = inv[:, :n], inv[:, n:]
        h_next = _sym(h + ak.T @ h @ w_a)
        g = _sym(g + ak @ w_g @ ak.T)
        ak = ak @ w_a
        if not np.all(np.isfinite(h_next)):
            raise NonConvergent("Riccati iteration diverged; is (a, b) stabilizable?")
        delta = float(np.abs(h_next - h).max())
        h = h_next
        if delta <= 1e-14 * max(1.0, float(np.abs(h).max())):
            break
    else:
        raise NonConvergent("Riccati iteration stalled; is (a, b) stabilizable?")

    p = h
    for _ in range(3):
        btp = b.T @ p
        p = _sym(q + a.T @ p @ a - a.T @ p @ b @ np.linalg.solve(r + btp @ b, btp @ a))
    k_gain = -np.linalg.solve(r + b.T @ p @ b, b.T @ p @ a)
    if spectral_radius(a + b @ k_gain) >= 1.0:
        raise NonConvergent("Riccati solution does not stabilize (a, b)")
    return k_gain, p


def lyapunov_certificate(a_k, epsilon=0.1):
    """Return ``P > 0`` with ``a_k^T P a_k - P = -epsilon I``."""
    if not epsilon > 0:
        raise DomainError("epsilon must be positive")
    a = as_matrix(a_k, "a_k")
    return solve_discrete_lyapunov(a.T, epsilon * np.eye(a.shape[0]))


def min_eigenvalue(p):
    return float(np.linalg.eigvalsh(_sym(as_matrix(p)))[0])


# -- scalar distributions ----------------------------------------------------

def normal_cdf(x):
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


def _bisect(f, lo, hi, target, iters=400):
    # f increasing on [lo, hi] with f(lo) <= target <= f(hi)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if f(mid) < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def normal_quantile(p):
    """Standard normal quantile by bisection on the erfc-based CDF."""
    if not 0.0 < p < 1.0:
        raise DomainError(f"normal_quantile needs 0 < p < 1, got {p}")
    if p == 0.5:
        return 0.0
    if p > 0.5:
        return -normal_quantile(1.0 - p)
    return _bisect(normal_cdf, -40.0, 0.0, p)


def _gammainc_series(a, x):
    term = 1.0 / a
    total = term
    ap = a
    for _ in range(10_000):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * 1e-17:
            break
    return total * math.exp(-x + a * math.log(x) - math.lgamma(a))


def _gammaincc_cfrac(a, x):
    # modified Lentz evaluation of the continued fraction for Q(a, x)
    tiny = 1e-300
    b = x + 1.0 - a
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, 10_000):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < tiny:
            d = tiny
        c = b + an / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-16:
            break
    return math.exp(-x + a * math.log(x) - math.lgamma(a)) * h


def chi2_cdf(x, dof):
    """CDF of the chi-squared distribution (regularized lower incomplete gamma)."""
    if x <= 0.0:
        return 0.0
    a = 0.5 * dof
    half = 0.5 * x
    if half < a + 1.0:
        return min(1.0, _gammainc_series(a, half))
    return max(0.0, 1.0 - _gammaincc_cfrac(a, half))


def chi2_quantile(p, dof):
    """Chi-squared quantile by bisection on :func:`chi2_cdf`."""
    if not 0.0 <= p < 1.0:
        raise DomainError(f"chi2_quantile needs 0 <= p < 1, got {p}")
    if dof < 1:
        raise DomainError("dof must be at least 1")
    if p == 0.0:
        return 0.0
    hi = float(dof)
    while chi2_cdf(hi, dof) < p:
        hi *= 2.0
    return _bisect(lambda x: chi2_cdf(x, dof), 0.0, hi, p)


def psd_factor(cov, name="covariance"):
    """Return ``L`` with ``L L^T = cov`` for a PSD matrix.

    Uses the Cholesky factor when ``cov`` is positive definite and a
    symmetric eigen-factor when it is only semidefinite (e.g. zero
    variance in some direction).
    """
    cov = _sym(as_matrix(cov, name))
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        pass
    vals, vecs = np.linalg.eigh(cov)
    scale = max(1.0, float(np.abs(vals).max(initial=0.0)))
    if vals.min(initial=0.0) < -1e-10 * scale:
        raise CholeskyFailure(f"{name} is indefinite (min eigenvalue {vals.min():.3e})")
    return vecs * np.sqrt(np.clip(vals, 0.0, None))
