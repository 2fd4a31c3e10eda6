"""Guided EDM stochastic sampler and posterior ensembles.

The sampler integrates the reverse dynamics with ``sigma(t) = t`` and unit
signal scaling: at every step it churns the state to a slightly higher noise
level, takes an Euler step using the denoiser slope plus a likelihood
guidance term, and applies a Heun correction unless the next level is zero.
The guidance term uses a perturbed Gaussian likelihood whose weight is
``lam / (sigma_y + t^2 nu)``.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigurationError, DataError, DivergenceError, EnsembleError, ShapeError
from .prior import NoiseSchedule, karras_schedule

DIVERGENCE_LIMIT = 1e6


@dataclass(frozen=True, eq=False)
class SamplerConfig:
    schedule: NoiseSchedule = field(default_factory=karras_schedule)
    s_churn: float = 10.0
    s_min: float = 0.05
    s_max: float = 50.0
    s_noise: float = 1.003
    sigma_y: float = 0.001
    nu: float = 1.0
    lam: float = 0.1
    n_samples: int = 20
    seed: int = 0

    def __post_init__(self):
        if self.s_churn < 0:
            raise ConfigurationError(f"s_churn must be >= 0, got {self.s_churn}")
        if not self.s_noise > 0:
            raise ConfigurationError(f"s_noise must be > 0, got {self.s_noise}")
        for name in ("sigma_y", "nu", "lam"):
            if not getattr(self, name) >= 0:
                raise ConfigurationError(f"{name} must be >= 0, got {getattr(self, name)}")
        if int(self.n_samples) != self.n_samples or self.n_samples < 1:
            raise ConfigurationError(f"n_samples must be a positive integer, got {self.n_samples}")

    def gamma(self, t):
        """Churn factor for the level ``t``."""
        if self.s_min <= t <= self.s_max:
            return min(self.s_churn / self.schedule.steps, math.sqrt(2.0) - 1.0)
        return 0.0

    def to_dict(self):
        d = {k: v for k, v in asdict(self).items() if k != "schedule"}
        d.update(steps=self.schedule.steps, sigma_min=self.schedule.sigma_min,
                 sigma_max=self.schedule.sigma_max, rho=self.schedule.rho)
        return d


def guidance_weight(t_hat, sigma_y, nu, lam):
    """``lam / (sigma_y + t_hat^2 nu)``."""
    denom = sigma_y + t_hat * t_hat * nu
    if not denom > 0:
        if lam == 0:
            return 0.0
        raise ConfigurationError(f"guidance weight denominator is {denom!r}; need sigma_y + t^2 nu > 0")
    return lam / denom


def likelihood_gradient(D, op, y, x_hat, t_hat, w, denoised=None):
    """``w * grad_x ||y - A(D(x; t))||^2`` through the denoiser Jacobian."""
    if not t_hat > 0:
        raise ConfigurationError(f"likelihood gradient needs t > 0, got {t_hat}")
    x_hat = np.asarray(x_hat, dtype=float)
    if x_hat.shape != op.input_shape:
        raise ShapeError(f"state {x_hat.shape} does not match operator input {op.input_shape}")
    if denoised is None:
        denoised = D.evaluate(x_hat, t_hat)
    residual = op.apply(denoised) - np.asarray(y, dtype=float)
    return (2.0 * w) * D.vjp(x_hat, t_hat, op.adjoint(residual))


def _run(D, shape, cfg, seed, op=None, y=None):
    guided = op is not None and cfg.lam != 0
    t = cfg.schedule.levels
    rng = np.random.default_rng(seed)

    def slope(x, level):
        den = D.evaluate(x, level)
        d = (x - den) / level
        if guided:
            w = guidance_weight(level, cfg.sigma_y, cfg.nu, cfg.lam)
            if w != 0:
                d = d + level * likelihood_gradient(D, op, y, x, level, w, den)
        return d

    x = t[0] * rng.standard_normal(shape)
    # overflow is caught by the divergence guard below
    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(cfg.schedule.steps):
            eps = cfg.s_noise * rng.standard_normal(shape)
            t_cur, t_next = t[i], t[i + 1]
            t_hat = t_cur + cfg.gamma(t_cur) * t_cur
            x_hat = x + math.sqrt(t_hat * t_hat - t_cur * t_cur) * eps
            d = slope(x_hat, t_hat)
            x = x_hat + (t_next - t_hat) * d
            if t_next != 0:
                d2 = slope(x, t_next)
                x = x_hat + (t_next - t_hat) * (0.5 * d + 0.5 * d2)
            if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > DIVERGENCE_LIMIT:
                raise DivergenceError(i)
    return x


def guided_sample(D, op, y, cfg, seed):
    """One posterior draw for measurement ``y`` under operator ``op``."""
    y = np.asarray(y, dtype=float)
    if y.shape != op.output_shape:
        raise ShapeError(f"measurement {y.shape} does not match operator output {op.output_shape}")
    return _run(D, op.input_shape, cfg, seed, op, y)


def unconditional_sample(D, shape, cfg, seed):
    """One prior draw; the guided sampler with guidance switched off."""
    return _run(D, tuple(shape), cfg, seed)


def member_seed(root, index):
    """Counter-based seed for ensemble member ``index``."""
    ss = np.random.SeedSequence(int(root), spawn_key=(int(index),))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


@dataclass(frozen=True, eq=False)
class PosteriorEnsemble:
    members: np.ndarray         # (n_samples, K, M, N)
    seeds: tuple
    config: dict
    operator: dict

    def __post_init__(self):
        m = np.asarray(self.members, dtype=float)
        if m.ndim != 4 or m.shape[0] < 1:
            raise DataError(f"ensemble members must be (S, K, M, N) with S >= 1, got {m.shape}")
        if len(self.seeds) != m.shape[0]:
            raise DataError("one seed per member required")
        m.setflags(write=False)
        object.__setattr__(self, "members", m)

    def __len__(self):
        return self.members.shape[0]


def run_ensemble(D, op, y, cfg, workers=1):
    """``cfg.n_samples`` independent guided draws; ordering is by member index."""
    seeds = [member_seed(cfg.seed, k) for k in range(cfg.n_samples)]
    results = {}

    def one(k):
        return k, guided_sample(D, op, y, cfg, seeds[k])

    failure = None
    if workers <= 1:
        for k in range(cfg.n_samples):
            try:
                results[k] = one(k)[1]
            except Exception as exc:  # keep completed members
                failure = failure or (k, exc)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(one, k) for k in range(cfg.n_samples)]
            for k, fut in enumerate(futures):
                try:
                    results[k] = fut.result()[1]
                except Exception as exc:
                    failure = failure or (k, exc)
    if failure is not None:
        raise EnsembleError(failure[0], failure[1], results)
    members = np.stack([results[k] for k in range(cfg.n_samples)])
    return PosteriorEnsemble(members, tuple(seeds), cfg.to_dict(), op.describe())
