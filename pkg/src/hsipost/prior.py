"""Denoiser contract, score proxy, EDM loss and the Karras noise schedule.

A denoiser is anything with

* ``evaluate(x, sigma)`` -> clean-signal estimate with the shape of ``x``;
* ``vjp(x, sigma, v)`` -> transpose-Jacobian of ``evaluate`` at ``(x, sigma)`` applied to ``v``.

Trained networks plug in by implementing those two methods.  The analytic
Gaussian denoiser below is the exact posterior mean under a diagonal
Gaussian prior and serves as the verification oracle.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol, runtime_checkable

import numpy as np

from .errors import ConfigurationError, DomainError, ShapeError

EDM_DATA_VARIANCE = 0.25


@runtime_checkable
class Denoiser(Protocol):
    def evaluate(self, x: np.ndarray, sigma: float) -> np.ndarray: ...

    def vjp(self, x: np.ndarray, sigma: float, v: np.ndarray) -> np.ndarray: ...


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    levels: np.ndarray          # t_0 > ... > t_{N-1} > t_N = 0
    sigma_min: float
    sigma_max: float
    rho: float

    @property
    def steps(self):
        return self.levels.size - 1

    def __iter__(self):
        return iter(self.levels)


def karras_schedule(N=40, sigma_min=0.002, sigma_max=80.0, rho=7.0):
    """``t_i = (smax^(1/rho) + i/(N-1) (smin^(1/rho) - smax^(1/rho)))^rho``, then a final 0."""
    if int(N) != N or N < 2:
        raise ConfigurationError(f"schedule needs N >= 2 steps, got {N}")
    if not 0 < sigma_min < sigma_max:
        raise ConfigurationError(f"need 0 < sigma_min < sigma_max, got {sigma_min}, {sigma_max}")
    if not rho > 0:
        raise ConfigurationError(f"rho must be positive, got {rho}")
    N = int(N)
    lo, hi = sigma_min ** (1 / rho), sigma_max ** (1 / rho)
    t = (hi + np.arange(N) / (N - 1) * (lo - hi)) ** rho
    # pin the endpoints exactly
    t[0], t[-1] = sigma_max, sigma_min
    levels = np.append(t, 0.0)
    levels.setflags(write=False)
    return NoiseSchedule(levels, float(sigma_min), float(sigma_max), float(rho))


@dataclass(frozen=True, eq=False)
class GaussianAnalyticPrior:
    """Diagonal Gaussian prior with per-voxel mean and variance cubes."""

    mean: np.ndarray
    variance: np.ndarray

    def __post_init__(self):
        m = np.array(self.mean, dtype=float)
        c = np.array(self.variance, dtype=float)
        if m.shape != c.shape:
            raise ShapeError(f"prior mean {m.shape} and variance {c.shape} differ in shape")
        if np.any(~np.isfinite(m)) or np.any(~(c > 0)) or np.any(~np.isfinite(c)):
            raise DomainError("prior variance must be finite and strictly positive")
        m.setflags(write=False)
        c.setflags(write=False)
        object.__setattr__(self, "mean", m)
        object.__setattr__(self, "variance", c)

    @property
    def shape(self):
        return self.mean.shape

    def sample(self, rng):
        return self.mean + np.sqrt(self.variance) * rng.standard_normal(self.shape)


class GaussianDenoiser:
    """Posterior mean ``m + c / (c + sigma^2) (x - m)`` for the prior ``N(m, diag c)``."""

    def __init__(self, prior):
        self.prior = prior

    def gain(self, sigma):
        c = self.prior.variance
        return c / (c + sigma * sigma)

    def evaluate(self, x, sigma):
        m = self.prior.mean
        return m + self.gain(sigma) * (np.asarray(x, dtype=float) - m)

    def vjp(self, x, sigma, v):
        return self.gain(sigma) * np.asarray(v, dtype=float)


class IdentityDenoiser:
    """``D(x; sigma) = x``; a degenerate prior for tests."""

    def evaluate(self, x, sigma):
        return np.array(x, dtype=float, copy=True)

    def vjp(self, x, sigma, v):
        return np.array(v, dtype=float, copy=True)


def gaussian_denoiser(prior):
    return GaussianDenoiser(prior)


def score_from_denoiser(D, x, sigma):
    """Score proxy ``(D(x; sigma) - x) / sigma^2``."""
    if not sigma > 0:
        raise DomainError(f"score needs sigma > 0, got {sigma}")
    x = np.asarray(x, dtype=float)
    return (D.evaluate(x, sigma) - x) / (sigma * sigma)


def edm_weight(sigma, data_variance=EDM_DATA_VARIANCE):
    """EDM loss weighting ``(sigma^2 + c) / (sigma^2 c)``."""
    return (sigma * sigma + data_variance) / (sigma * sigma * data_variance)


def edm_loss(D, x0, sigma, eps, weight=edm_weight):
    """``w(sigma) * ||D(x0 + sigma eps; sigma) - x0||^2`` for one draw of ``eps``."""
    x0 = np.asarray(x0, dtype=float)
    eps = np.asarray(eps, dtype=float)
    if x0.shape != eps.shape:
        raise ShapeError(f"x0 {x0.shape} and eps {eps.shape} differ in shape")
    w = weight(sigma) if callable(weight) else float(weight)
    if not w > 0:
        raise ConfigurationError(f"loss weight must be positive, got {w}")
    r = D.evaluate(x0 + sigma * eps, sigma) - x0
    return float(w * np.sum(r * r))
