"""Monte Carlo property checks for reachable sets and closed-loop runs.

Every check returns a :class:`CheckResult` holding the observed rates,
the threshold they were compared with and the standard errors used, so
a failure can be read off the report without rerunning anything.
"""
import math
from dataclasses import dataclass, field

import numpy as np

from .controller import M1
from .numerics import as_matrix
from .reachability import EllipsoidPrs, IntervalPrs, mc_prs_level, n_step_prs
from .simulator import EnsembleResult
from .uncertainty import GaussianDisturbance, RngStream

__all__ = [
    "CheckResult",
    "scaled_prs",
    "nestedness_check",
    "shift_dominance_check",
    "closed_loop_level_check",
    "predictive_check",
]

SIGMAS = 3.0


@dataclass
class CheckResult:
    name: str
    passed: bool
    observed: list
    threshold: list
    stderr: list
    detail: dict = field(default_factory=dict)

    def as_dict(self):
        return {"name": self.name, "passed": self.passed, "observed": self.observed,
                "threshold": self.threshold, "stderr": self.stderr, "detail": self.detail}


def _se(p, n):
    return math.sqrt(max(p * (1.0 - p), 0.0) / n)


def scaled_prs(prs, factor):
    """Same set shrunk or grown by ``factor`` in every direction (level kept)."""
    if isinstance(prs, IntervalPrs):
        return IntervalPrs(prs.direction, prs.half_width * factor, prs.level)
    return EllipsoidPrs(prs.shape, prs.radius * factor * factor, prs.level)


def nestedness_check(a_k, w_cov, level, n_max=10, trials=10_000, rng=None):
    """An n-step PRS also holds at step n-1, for n = 2 .. n_max.

    The n-step Gaussian ellipsoid is built from the propagated variance and
    its empirical level at step ``n - 1`` must not fall below the level at
    step ``n`` by more than three pooled standard errors.
    """
    rng = rng or RngStream(0, 0)
    dist = GaussianDisturbance.zero_mean(w_cov)
    obs, thr, ses = [], [], []
    ok = True
    for n in range(2, n_max + 1):
        prs = n_step_prs(a_k, w_cov, n, level)
        before = mc_prs_level(a_k, dist, prs, n - 1, trials, rng.child(2 * n))
        at = mc_prs_level(a_k, dist, prs, n, trials, rng.child(2 * n + 1))
        pooled = math.hypot(before.stderr, at.stderr)
        obs.append([before.value, at.value])
        thr.append(at.value - SIGMAS * pooled)
        ses.append(pooled)
        ok &= before.value >= at.value - SIGMAS * pooled
    return CheckResult("nestedness", bool(ok), obs, thr, ses, {"level": level, "trials": trials})


def _random_symmetric_set(gen, n, scale):
    """Centred ellipsoid or box, both convex and symmetric about 0."""
    if gen.random() < 0.5:
        m = gen.standard_normal((n, n))
        shape = m @ m.T + 0.1 * np.eye(n)
        shape *= scale**2 / np.trace(shape) * n
        return ("ellipsoid", shape, float(gen.uniform(0.3, 3.0)))
    return ("box", scale * gen.uniform(0.3, 2.0, n), None)


def _inside(spec, pts):
    kind, a, b = spec
    if kind == "ellipsoid":
        sol = np.linalg.solve(a, pts.T).T
        return np.einsum("ij,ij->i", pts, sol) <= b
    return np.all(np.abs(pts) <= a, axis=1)


def shift_dominance_check(w_cov, n_sets=20, trials=10_000, rng=None):
    """Shifting a Gaussian by an independent vector cannot raise its mass
    on a centred symmetric convex set.

    For random sets ``R`` and random shift distributions, compares
    ``Pr(w in R)`` with ``Pr(w + x in R)`` on independent samples.
    """
    rng = rng or RngStream(0, 1)
    gen = rng.generator()
    cov = as_matrix(w_cov, "w_cov")
    dist = GaussianDisturbance.zero_mean(cov)
    n = dist.dim
    scale = math.sqrt(max(np.trace(cov) / n, 1e-12))
    obs, thr, ses = [], [], []
    ok = True
    for _ in range(n_sets):
        spec = _random_symmetric_set(gen, n, scale)
        centre = gen.standard_normal(n) * scale * gen.uniform(0.0, 2.0)
        spread = gen.uniform(0.0, 1.5) * scale
        w1 = dist.transform(gen.standard_normal((trials, n)))
        w2 = dist.transform(gen.standard_normal((trials, n)))
        x = centre + spread * gen.uniform(-1.0, 1.0, (trials, n))
        p_w = float(_inside(spec, w1).mean())
        p_wx = float(_inside(spec, w2 + x).mean())
        pooled = math.hypot(_se(p_w, trials), _se(p_wx, trials))
        obs.append([p_w, p_wx])
        thr.append(p_wx - SIGMAS * pooled)
        ses.append(pooled)
        ok &= p_w >= p_wx - SIGMAS * pooled
    return CheckResult("shift_dominance", bool(ok), obs, thr, ses, {"sets": n_sets, "trials": trials})


def closed_loop_level_check(result: EnsembleResult, prs, signal="e", name="closed_loop_level"):
    """Per-step ``Pr(e(k) in prs) >= level - 3 SE`` over the ensemble.

    ``signal="ke"`` tests ``K e(k)`` instead, for input-space sets.
    """
    if signal == "ke":
        k_gain = np.atleast_2d(result.config.setup.k_gain)
        data = result.e @ k_gain.T
    else:
        data = result.e
    hits = prs.contains(data)
    rates = hits.mean(axis=0)
    # binomial SE at the claimed level: defined even when a step has no misses
    se = _se(prs.level, hits.shape[0])
    thr = prs.level - SIGMAS * se
    ok = bool(np.all(rates >= thr))
    return CheckResult(name, ok, rates.tolist(), [thr] * rates.size, [se] * rates.size,
                       {"level": prs.level, "samples": int(hits.size)})


def predictive_check(result: EnsembleResult, prs, horizon=5, rng=None, name="predictive"):
    """From every mode-1 record, forward-sample the predicted error
    ``e_{i+1} = A_K e_i + w_i`` with ``e_0 = 0`` and require membership at
    each ``i = 1 .. horizon`` with rate ``>= level - 3 SE``."""
    rng = rng or RngStream(0, 2)
    gen = rng.generator()
    setup = result.config.setup
    a_k = setup.system.a + setup.system.b @ np.atleast_2d(setup.k_gain)
    dist = result.config.schedule.base
    count = int((result.mode == M1).sum())
    if count == 0:
        return CheckResult(name, True, [], [], [], {"samples": 0})
    e = np.zeros((count, setup.system.n))
    obs, thr, ses = [], [], []
    ok = True
    for _ in range(horizon):
        e = e @ a_k.T + dist.transform(gen.standard_normal((count, dist.dim)))
        rate = float(prs.contains(e).mean())
        se = _se(prs.level, count)
        obs.append(rate)
        thr.append(prs.level - SIGMAS * se)
        ses.append(se)
        ok &= rate >= prs.level - SIGMAS * se
    return CheckResult(name, bool(ok), obs, thr, ses, {"level": prs.level, "samples": count})
