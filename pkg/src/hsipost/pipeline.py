"""End-to-end steps shared by the command line and the test-suite:
operator construction from config, prior fitting, ensemble sampling in the
model range against a reflectance-range measurement, metric rows and the
guidance-parameter sweep.
"""

from __future__ import annotations

import itertools

import numpy as np

from .core import to_model_range
from .errors import ConfigurationError, ShapeError
from .metrics import posterior_stats, report_row
from .operators import AffineInputOperator, make_operator
from .prior import GaussianAnalyticPrior, gaussian_denoiser
from .sampler import run_ensemble

SWEEP_KEYS = ("sigma_y", "nu", "lambda")
PRIOR_VARIANCE_FLOOR = 1e-4


def operator_from_config(cfg, shape):
    """Forward operator for a ``(K, M, N)`` cube from the ``[operator]`` section."""
    from . import io

    kind = cfg.get("operator", "kind")
    srf = psf = mask = None
    if kind in ("srf", "optics"):
        path = cfg.path("operator", "srf")
        if path is None:
            raise ConfigurationError(f"[operator] srf is required for kind {kind}")
        srf = io.read_srf(path)
    if kind == "optics":
        path = cfg.path("operator", "psf")
        if path is None:
            raise ConfigurationError("[operator] psf is required for kind optics")
        psf = io.read_psf(path)
    if kind == "cassi":
        path = cfg.path("operator", "mask")
        if path is None:
            raise ConfigurationError("[operator] mask is required for kind cassi")
        mask = io.read_mask(path)
    return make_operator(kind, shape, srf=srf, psf=psf, mask=mask, shear=cfg.get("operator", "shear"))


def fit_prior(cubes, floor=PRIOR_VARIANCE_FLOOR):
    """Diagonal Gaussian prior in the model range.

    Several cubes give per-voxel moments across cubes; a single cube gives
    per-band spatial moments broadcast over the image.
    """
    x = np.stack([np.asarray(to_model_range(c), dtype=float) for c in cubes])
    if x.shape[0] > 1:
        mean, var = x.mean(axis=0), x.var(axis=0)
    else:
        mean = np.broadcast_to(x[0].mean(axis=(1, 2), keepdims=True), x[0].shape)
        var = np.broadcast_to(x[0].var(axis=(1, 2), keepdims=True), x[0].shape)
    return GaussianAnalyticPrior(mean, np.maximum(var, floor))


def to_reflectance_members(members, clip=True):
    r = (np.asarray(members, dtype=float) + 1.0) / 2.0
    return np.clip(r, 0.0, 1.0) if clip else r


def sample_posterior(op, y, prior, scfg, workers=1, clip=True):
    """Guided ensemble for a reflectance-range measurement ``y``.

    Returns ``(ensemble, reflectance members, UncertaintyCube)``; the
    ensemble itself stays in the model range.
    """
    if prior.shape != op.input_shape:
        raise ShapeError(f"prior shape {prior.shape} does not match operator input {op.input_shape}")
    model_op = AffineInputOperator(op)
    ens = run_ensemble(gaussian_denoiser(prior), model_op, y, scfg, workers=workers)
    # round to the float32 storage precision so file-based metrics agree exactly
    refl = to_reflectance_members(ens.members, clip).astype(np.float32).astype(float)
    return ens, refl, posterior_stats(refl)


def parse_grid(text):
    """``"sigma_y=0.001,2;nu=1;lambda=0.01,0.1"`` -> ordered dict of value lists."""
    grid = {}
    for part in filter(None, (p.strip() for p in text.split(";"))):
        key, sep, vals = part.partition("=")
        key = key.strip()
        if not sep or key not in SWEEP_KEYS:
            raise ConfigurationError(f"sweep grid entry {part!r}: expected one of {', '.join(SWEEP_KEYS)}=v1,v2,...")
        if key in grid:
            raise ConfigurationError(f"sweep grid repeats {key}")
        try:
            grid[key] = [float(v) for v in vals.split(",") if v.strip()]
        except ValueError:
            raise ConfigurationError(f"sweep grid entry {part!r} has a non-numeric value")
        if not grid[key]:
            raise ConfigurationError(f"sweep grid entry {part!r} has no values")
    return grid


def sweep_cells(cfg, grid):
    """Cartesian product of grid values; unspecified keys take their config value."""
    axes = [grid.get(k, [cfg.get("guidance", k)]) for k in SWEEP_KEYS]
    return [dict(zip(SWEEP_KEYS, cell)) for cell in itertools.product(*axes)]


def run_sweep(cfg, grid, op, y, prior, reference, image_id="image", workers=1):
    """One metrics row per grid cell, each with the same member seeds."""
    rows = []
    for cell in sweep_cells(cfg, grid):
        scfg = cfg.sampler_config(sigma_y=cell["sigma_y"], nu=cell["nu"], lam=cell["lambda"])
        _, _, u = sample_posterior(op, y, prior, scfg, workers, cfg.get("io", "clip_members"))
        row = dict(cell)
        row.update(report_row(image_id, op.kind, reference, u))
        rows.append(row)
    return rows
