"""Posterior summaries and evaluation metrics.

Metrics expect reflectance-range data with peak 1.  Intervals are
``mean +- k * std`` with ``k = 2`` by default (nominal Gaussian coverage
0.9545).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DataError, DomainError, ShapeError, UndefinedMetricError

NOMINAL_2SIGMA = math.erf(2.0 / math.sqrt(2.0))
VARIANCE_FLOOR = 1e-12


def _arr(x):
    return np.asarray(x, dtype=float)


def _same_shape(*arrays):
    shapes = {a.shape for a in arrays}
    if len(shapes) != 1:
        raise ShapeError(f"shape mismatch: {sorted(shapes)}")


@dataclass(frozen=True, eq=False)
class UncertaintyCube:
    mean: np.ndarray
    variance: np.ndarray
    count: int

    def __post_init__(self):
        m, v = _arr(self.mean), _arr(self.variance)
        _same_shape(m, v)
        if np.any(v < 0):
            raise DomainError("variance must be nonnegative")
        for a in (m, v):
            a.setflags(write=False)
        object.__setattr__(self, "mean", m)
        object.__setattr__(self, "variance", v)

    @property
    def std(self):
        return np.sqrt(self.variance)

    @property
    def shape(self):
        return self.mean.shape


@dataclass(frozen=True)
class CalibrationRecord:
    image_id: str
    operator: str
    mae: float
    mean_std: float

    def __post_init__(self):
        if not (self.mae >= 0 and self.mean_std >= 0):
            raise DomainError("MAE and mean std must be nonnegative")


def posterior_stats(members):
    """Mean and population variance across the leading (member) axis.

    Accepts a ``PosteriorEnsemble`` or an array of shape ``(S, ...)``.
    """
    x = _arr(getattr(members, "members", members))
    if x.ndim < 1 or x.shape[0] == 0:
        raise DataError("posterior statistics need at least one member")
    mean = x.mean(axis=0)
    var = np.mean((x - mean) ** 2, axis=0)
    # exact answer where all members agree; the float mean can be off by an ulp
    same = np.all(x == x[0], axis=0)
    mean = np.where(same, x[0], mean)
    var = np.where(same, 0.0, var)
    return UncertaintyCube(mean, var, x.shape[0])


def uncertainty_from(mean, std, count=0):
    std = _arr(std)
    return UncertaintyCube(_arr(mean), std * std, count)


def mse(reference, estimate):
    r, e = _arr(reference), _arr(estimate)
    _same_shape(r, e)
    return float(np.mean((r - e) ** 2))


def psnr(reference, estimate, peak=1.0):
    """``10 log10(peak^2 / MSE)``; ``inf`` when the inputs agree exactly."""
    err = mse(reference, estimate)
    if err == 0:
        return math.inf
    return 10.0 * math.log10(peak * peak / err)


def sam_angles(reference, estimate):
    """Per-pixel spectral angles in degrees for (K, M, N) inputs; NaN at zero-norm pixels."""
    r, e = _arr(reference), _arr(estimate)
    _same_shape(r, e)
    r = r.reshape(r.shape[0], -1)
    e = e.reshape(e.shape[0], -1)
    nr = np.linalg.norm(r, axis=0)
    ne = np.linalg.norm(e, axis=0)
    ok = (nr > 0) & (ne > 0)
    cos = np.full(r.shape[1], np.nan)
    cos[ok] = np.sum(r[:, ok] * e[:, ok], axis=0) / (nr[ok] * ne[ok])
    return np.degrees(np.arccos(np.clip(cos, -1.0, 1.0)))


def sam(reference, estimate, return_skipped=False):
    """Mean spectral angle in degrees over pixels with nonzero norm in both inputs."""
    ang = sam_angles(reference, estimate)
    valid = ~np.isnan(ang)
    if not valid.any():
        raise UndefinedMetricError("spectral angle undefined: every pixel has zero norm")
    value = float(np.mean(ang[valid]))
    if return_skipped:
        return value, int(ang.size - valid.sum())
    return value


def _inside(reference, u, k):
    if not k > 0:
        raise DomainError(f"interval width k must be positive, got {k}")
    r = _arr(reference)
    _same_shape(r, u.mean)
    return np.abs(r - u.mean) <= k * u.std


def picp(reference, u, k=2.0):
    """Fraction of voxels whose reference lies within ``mean +- k * std``."""
    return float(np.mean(_inside(reference, u, k)))


def picp_pixel(reference, u, k=2.0):
    """Fraction of pixels whose every band lies inside the interval (band axis first)."""
    return float(np.mean(np.all(_inside(reference, u, k), axis=0)))


def bcm(reference, u, k=2.0):
    """Per-pixel map, 1 where any band falls outside ``mean +- k * std``."""
    return np.any(~_inside(reference, u, k), axis=0).astype(np.uint8)


def pearson_calibration(records):
    """Pearson correlation between per-image MAE and per-image mean std."""
    if len(records) < 3:
        raise DataError(f"need at least 3 records, got {len(records)}")
    a = np.array([r.mae for r in records], dtype=float)
    b = np.array([r.mean_std for r in records], dtype=float)
    a = a - a.mean()
    b = b - b.mean()
    sa, sb = np.sqrt(np.sum(a * a)), np.sqrt(np.sum(b * b))
    if sa == 0 or sb == 0:
        raise UndefinedMetricError("correlation undefined: a coordinate has zero variance")
    return float(np.sum(a * b) / (sa * sb))


def gaussian_nll(reference, mean, variance, floor=VARIANCE_FLOOR):
    """``0.5 * mean((ref - mean)^2 / var + log var)`` with ``var`` floored."""
    r, m, v = _arr(reference), _arr(mean), _arr(variance)
    _same_shape(r, m, v)
    v = np.maximum(v, floor)
    return float(0.5 * np.mean((r - m) ** 2 / v + np.log(v)))


def calibration_record(image_id, operator, reference, u):
    return CalibrationRecord(str(image_id), str(operator),
                             float(np.mean(np.abs(_arr(reference) - u.mean))),
                             float(np.mean(u.std)))


REPORT_FIELDS = ("image", "operator", "psnr", "sam", "picp", "bcm_rate", "mean_std", "nll", "members")


def report_row(image_id, operator, reference, u, k=2.0):
    """One metrics row for a reference cube and its posterior summary."""
    try:
        angle = sam(reference, u.mean)
    except UndefinedMetricError:
        angle = math.nan
    return {
        "image": image_id,
        "operator": operator,
        "psnr": psnr(reference, u.mean),
        "sam": angle,
        "picp": picp(reference, u, k),
        "bcm_rate": float(np.mean(bcm(reference, u, k))),
        "mean_std": float(np.mean(u.std)),
        "nll": gaussian_nll(reference, u.mean, u.variance),
        "members": u.count,
    }
