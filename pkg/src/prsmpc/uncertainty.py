"""Disturbance models, seeded random streams and variance propagation."""
from dataclasses import dataclass
from functools import cached_property
from typing import Optional

import numpy as np

from .numerics import as_matrix, psd_factor

__all__ = [
    "GaussianDisturbance",
    "DisturbanceSchedule",
    "RngStream",
    "sample",
    "propagate_variance",
    "expected_p_norm",
    "MonteCarloEstimate",
]


@dataclass(frozen=True)
class RngStream:
    """Reproducible random stream identified by ``(seed, stream_id)``.

    Backed by the counter-based Philox generator; the stream id enters
    the seed sequence's spawn key so distinct ids give independent
    streams and the same pair always replays the same draws.
    """

    seed: int
    stream_id: int = 0

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream_id,))
        return np.random.Generator(np.random.Philox(ss))

    def child(self, sub_id: int) -> "RngStream":
        # fold the sub id into a fresh 64-bit stream id
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream_id, sub_id))
        return RngStream(self.seed, int(ss.generate_state(1, np.uint64)[0]))


@dataclass(frozen=True, eq=False)
class GaussianDisturbance:
    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        cov = as_matrix(self.covariance, "covariance")
        mean = np.asarray(self.mean, dtype=float).ravel()
        if cov.shape != (mean.size, mean.size):
            raise ValueError(f"mean has {mean.size} entries but covariance is {cov.shape}")
        object.__setattr__(self, "covariance", 0.5 * (cov + cov.T))
        object.__setattr__(self, "mean", mean)

    @classmethod
    def zero_mean(cls, covariance):
        cov = as_matrix(covariance, "covariance")
        return cls(np.zeros(cov.shape[0]), cov)

    @property
    def dim(self) -> int:
        return self.mean.size

    @cached_property
    def factor(self) -> np.ndarray:
        return psd_factor(self.covariance)

    def transform(self, xi):
        """Map standard normal draws ``xi`` (..., n) to draws of this model."""
        return self.mean + np.asarray(xi) @ self.factor.T


@dataclass(frozen=True)
class DisturbanceSchedule:
    """Nominal disturbance with an optional periodic burst.

    At steps ``k > 0`` with ``k % burst_period == 0`` the burst model
    replaces the base model; every other step uses ``base``.
    """

    base: GaussianDisturbance
    burst: Optional[GaussianDisturbance] = None
    burst_period: int = 0

    def __post_init__(self):
        if self.burst is not None:
            if self.burst_period < 1:
                raise ValueError("burst_period must be >= 1 when a burst model is given")
            if self.burst.dim != self.base.dim:
                raise ValueError("burst and base disturbances differ in dimension")

    def is_burst(self, k: int) -> bool:
        return self.burst is not None and k > 0 and k % self.burst_period == 0

    def model_at(self, k: int) -> GaussianDisturbance:
        return self.burst if self.is_burst(k) else self.base

    def draw_sequence(self, xi):
        """Turn a (steps, n) block of standard normals into disturbances."""
        xi = np.asarray(xi, dtype=float)
        w = self.base.transform(xi)
        if self.burst is not None:
            ks = np.arange(xi.shape[0])
            mask = (ks > 0) & (ks % self.burst_period == 0)
            w[mask] = self.burst.transform(xi[mask])
        return w


def sample(model: GaussianDisturbance, rng) -> np.ndarray:
    """Draw one disturbance ``mean + L xi``.

    ``rng`` may be an :class:`RngStream` (fresh generator, so the same
    stream always returns the same first draw) or a numpy Generator.
    """
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    return model.transform(gen.standard_normal(model.dim))


def propagate_variance(a_k, w_cov, n):
    """Return ``[var(x(0)), ..., var(x(n))]`` for ``x(i+1) = a_k x(i) + w``, x(0)=0."""
    a = as_matrix(a_k, "a_k")
    w = as_matrix(w_cov, "w_cov")
    if n < 0:
        raise ValueError("n must be non-negative")
    out = [np.zeros_like(w)]
    for _ in range(n):
        s = a @ out[-1] @ a.T + w
        out.append(0.5 * (s + s.T))
    return out


@dataclass(frozen=True)
class MonteCarloEstimate:
    value: float
    stderr: float
    samples: int


def expected_p_norm(model: GaussianDisturbance, p, samples: int, rng) -> MonteCarloEstimate:
    """Monte Carlo estimate of ``E sqrt(w' P w)`` with its standard error."""
    if samples < 1000:
        raise ValueError("expected_p_norm needs at least 1000 samples")
    p = as_matrix(p, "p")
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    w = model.transform(gen.standard_normal((samples, model.dim)))
    norms = np.sqrt(np.maximum(np.einsum("ij,jk,ik->i", w, p, w), 0.0))
    return MonteCarloEstimate(float(norms.mean()), float(norms.std(ddof=1) / np.sqrt(samples)), samples)
