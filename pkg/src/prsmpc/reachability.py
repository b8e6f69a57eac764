"""Probabilistic reachable sets (PRS) and constraint tightening.

Two concrete set shapes are supported: ellipsoids ``{e : e' S^-1 e <= r}``
built from a covariance, and symmetric slabs ``{e : |a e| <= w}`` built
from a one-dimensional marginal. Both are convex and symmetric about the
origin, which is what the closed-loop guarantees need.
"""
import math
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .errors import DomainError, EmptyTightening, Unbounded
from .numerics import as_matrix, chi2_quantile, normal_quantile, solve_discrete_lyapunov
from .uncertainty import GaussianDisturbance, MonteCarloEstimate, RngStream, propagate_variance

__all__ = [
    "EllipsoidPrs",
    "IntervalPrs",
    "Polytope",
    "chebyshev_prs",
    "gaussian_prs",
    "marginal_interval_prs",
    "n_step_prs",
    "mc_prs_level",
    "support_function",
    "linear_image",
    "pontryagin_tighten",
    "set_to_json",
    "set_from_json",
]


@dataclass(frozen=True, eq=False)
class EllipsoidPrs:
    shape: np.ndarray
    radius: float
    level: float

    def __post_init__(self):
        s = as_matrix(self.shape, "shape")
        if s.shape[0] != s.shape[1]:
            raise ValueError("ellipsoid shape must be square")
        if self.radius < 0:
            raise ValueError("radius must be non-negative")
        object.__setattr__(self, "shape", 0.5 * (s + s.T))

    @property
    def dim(self):
        return self.shape.shape[0]

    def contains(self, e, tol=1e-12):
        """Vectorised membership test for points ``e`` of shape (..., n).

        A singular shape matrix is handled through its pseudo-inverse plus
        a range check, so the zero-variance set is exactly ``{0}``.
        """
        e = np.asarray(e, dtype=float)
        vals, vecs = np.linalg.eigh(self.shape)
        scale = max(1.0, float(np.abs(vals).max()))
        keep = vals > 1e-12 * scale
        coords = e @ vecs
        quad = np.sum(coords[..., keep] ** 2 / vals[keep], axis=-1)
        off = np.sum(coords[..., ~keep] ** 2, axis=-1)
        return (quad <= self.radius * (1 + tol) + tol) & (off <= tol)


@dataclass(frozen=True, eq=False)
class IntervalPrs:
    direction: np.ndarray
    half_width: float
    level: float

    def __post_init__(self):
        a = np.asarray(self.direction, dtype=float).ravel()
        if not np.any(a):
            raise ValueError("direction must be nonzero")
        if self.half_width < 0:
            raise ValueError("half_width must be non-negative")
        object.__setattr__(self, "direction", a)

    @property
    def dim(self):
        return self.direction.size

    def contains(self, e, tol=1e-12):
        e = np.asarray(e, dtype=float)
        return np.abs(e @ self.direction) <= self.half_width + tol


PrsSet = Union[EllipsoidPrs, IntervalPrs]


@dataclass(frozen=True, eq=False)
class Polytope:
    """``{x : normals @ x <= offsets}``."""

    normals: np.ndarray
    offsets: np.ndarray

    def __post_init__(self):
        h = np.asarray(self.offsets, dtype=float).ravel()
        a = np.asarray(self.normals, dtype=float)
        a = a.reshape(h.size, -1) if h.size else a.reshape(0, a.shape[-1] if a.ndim == 2 else 0)
        object.__setattr__(self, "normals", a)
        object.__setattr__(self, "offsets", h)

    @classmethod
    def box(cls, lower, upper):
        """Axis-aligned box; infinite bounds are dropped."""
        lower = np.asarray(lower, dtype=float).ravel()
        upper = np.asarray(upper, dtype=float).ravel()
        n = lower.size
        rows, offs = [], []
        for i in range(n):
            if np.isfinite(upper[i]):
                rows.append(np.eye(n)[i])
                offs.append(upper[i])
            if np.isfinite(lower[i]):
                rows.append(-np.eye(n)[i])
                offs.append(-lower[i])
        return cls(np.array(rows).reshape(len(rows), n), np.array(offs))

    @classmethod
    def origin(cls, n):
        """The singleton ``{0}`` written as opposing rows per coordinate."""
        eye = np.eye(n)
        return cls(np.vstack([eye, -eye]), np.zeros(2 * n))

    @classmethod
    def whole_space(cls, n):
        return cls(np.zeros((0, n)), np.zeros(0))

    @property
    def dim(self):
        return self.normals.shape[1]

    @property
    def n_faces(self):
        return self.offsets.size

    def contains(self, x, tol=1e-9):
        x = np.asarray(x, dtype=float)
        if self.n_faces == 0:
            return np.ones(x.shape[:-1], dtype=bool)
        return np.all(x @ self.normals.T <= self.offsets + tol, axis=-1)

    def contains_origin(self):
        return bool(np.all(self.offsets >= 0.0))


# -- construction --------------------------------------------------------------

def _check_level(level):
    if not 0.0 <= level < 1.0:
        raise DomainError(f"PRS level must lie in [0, 1), got {level}")


def chebyshev_prs(sigma, level, dim=None):
    """Distribution-free ellipsoid of radius ``dim / (1 - level)``."""
    _check_level(level)
    sigma = as_matrix(sigma, "sigma")
    dim = sigma.shape[0] if dim is None else dim
    return EllipsoidPrs(sigma, dim / (1.0 - level), level)


def gaussian_prs(sigma, level, dim=None):
    """Exact-level ellipsoid for a zero-mean Gaussian (chi-squared radius)."""
    _check_level(level)
    sigma = as_matrix(sigma, "sigma")
    dim = sigma.shape[0] if dim is None else dim
    return EllipsoidPrs(sigma, chi2_quantile(level, dim), level)


def marginal_interval_prs(direction, sigma, level):
    """Slab ``|a e| <= w`` with ``Pr = level`` exactly for Gaussian ``e``."""
    _check_level(level)
    a = np.asarray(direction, dtype=float).ravel()
    sigma = as_matrix(sigma, "sigma")
    var = float(a @ sigma @ a)
    width = 0.0 if level == 0.0 else normal_quantile(0.5 * (1.0 + level)) * math.sqrt(max(var, 0.0))
    return IntervalPrs(a, width, level)


def n_step_prs(a_k, w_cov, n, level, method="gaussian"):
    """Ellipsoidal n-step PRS of the autonomous error system.

    ``n = math.inf`` uses the stationary covariance directly.
    """
    if method not in ("gaussian", "chebyshev"):
        raise ValueError(f"unknown PRS method {method!r}")
    a = as_matrix(a_k, "a_k")
    if math.isinf(n):
        sigma = solve_discrete_lyapunov(a, w_cov)
    else:
        sigma = propagate_variance(a, w_cov, int(n))[-1]
    build = gaussian_prs if method == "gaussian" else chebyshev_prs
    return build(sigma, level, a.shape[0])


def mc_prs_level(a_k, dist: GaussianDisturbance, prs: PrsSet, n, trials, rng) -> MonteCarloEstimate:
    """Empirical ``Pr(x(n) in prs)`` for ``x(i+1) = a_k x(i) + w(i)``, ``x(0) = 0``."""
    if trials < 1000:
        raise ValueError("mc_prs_level needs at least 1000 trials")
    a = as_matrix(a_k, "a_k")
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    x = np.zeros((trials, a.shape[0]))
    for _ in range(int(n)):
        x = x @ a.T + dist.transform(gen.standard_normal((trials, dist.dim)))
    hits = prs.contains(x)
    rate = float(hits.mean())
    return MonteCarloEstimate(rate, math.sqrt(max(rate * (1 - rate), 0.0) / trials), trials)


# -- support functions and tightening --------------------------------------------

def support_function(prs: PrsSet, direction) -> float:
    """``sup_{e in prs} direction . e``; raises :class:`Unbounded` if infinite."""
    d = np.asarray(direction, dtype=float).ravel()
    if not np.any(d):
        raise ValueError("direction must be nonzero")
    if isinstance(prs, EllipsoidPrs):
        return math.sqrt(max(prs.radius * float(d @ prs.shape @ d), 0.0))
    a = prs.direction
    aa = float(a @ a)
    coef = float(d @ a) / aa
    if np.abs(d - coef * a).max() > 1e-12 * np.abs(d).max():
        raise Unbounded("slab PRS is unbounded in a direction not parallel to its normal")
    return prs.half_width * abs(coef)


def linear_image(prs: PrsSet, m) -> PrsSet:
    """Image ``M prs`` of a PRS under a linear map (e.g. ``K R_u``)."""
    m = as_matrix(m, "m")
    if isinstance(prs, EllipsoidPrs):
        return EllipsoidPrs(m @ prs.shape @ m.T, prs.radius, prs.level)
    if m.shape[0] != 1:
        raise Unbounded("image of a slab is only bounded under a rank-one map")
    row = m[0]
    a = prs.direction
    coef = float(row @ a) / float(a @ a)
    if np.abs(row - coef * a).max() > 1e-12 * np.abs(row).max():
        raise Unbounded("map is not aligned with the slab normal")
    return IntervalPrs(np.ones(1), prs.half_width * abs(coef), prs.level)


def pontryagin_tighten(x_set: Polytope, prs: Union[PrsSet, Sequence[PrsSet]]) -> Polytope:
    """Shrink each face of ``x_set`` by the support of the PRS.

    ``prs`` is either one set used for every face (joint tightening) or a
    sequence with one set per face (individual tightening).
    """
    if isinstance(prs, (EllipsoidPrs, IntervalPrs)):
        per_face = [prs] * x_set.n_faces
    else:
        per_face = list(prs)
        if len(per_face) != x_set.n_faces:
            raise ValueError("need exactly one PRS per face for individual tightening")
    offsets = x_set.offsets.copy()
    for i, (row, s) in enumerate(zip(x_set.normals, per_face)):
        if not np.any(row):
            continue
        offsets[i] -= support_function(s, row)
        if offsets[i] < 0.0:
            raise EmptyTightening(
                f"face {i} ({row.tolist()} . x <= {x_set.offsets[i]:g}) tightens to "
                f"{offsets[i]:g} < 0; the PRS is too large for this constraint",
                face=i,
            )
    return Polytope(x_set.normals.copy(), offsets)


# -- JSON ------------------------------------------------------------------------

def set_to_json(s) -> dict:
    if isinstance(s, EllipsoidPrs):
        return {"type": "ellipsoid", "shape": s.shape.tolist(), "radius": s.radius, "level": s.level}
    if isinstance(s, IntervalPrs):
        return {"type": "interval", "direction": s.direction.tolist(), "half_width": s.half_width, "level": s.level}
    if isinstance(s, Polytope):
        return {"type": "polytope", "dim": s.dim, "normals": s.normals.tolist(), "offsets": s.offsets.tolist()}
    raise TypeError(f"cannot serialize {type(s).__name__}")


def set_from_json(doc: dict):
    kind = doc.get("type")
    if kind == "ellipsoid":
        return EllipsoidPrs(np.array(doc["shape"], dtype=float), float(doc["radius"]), float(doc["level"]))
    if kind == "interval":
        return IntervalPrs(np.array(doc["direction"], dtype=float), float(doc["half_width"]), float(doc["level"]))
    if kind == "polytope":
        offsets = np.array(doc["offsets"], dtype=float)
        normals = np.array(doc["normals"], dtype=float)
        if offsets.size == 0:
            normals = np.zeros((0, int(doc.get("dim", 0))))
        return Polytope(normals, offsets)
    raise ValueError(f"unknown set type {kind!r}")
