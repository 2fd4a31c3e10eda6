"""Command-line entry point ``hsipost``.

Failures print one JSON line ``{"error": <type>, "message": <text>}`` to
stderr and exit with status 1 (2 for usage errors).
"""

from __future__ import annotations

import argparse
import csv
import io as _io
import json
import math
import sys

import numpy as np

from . import io
from .core import HSICube, camera_srf
from .errors import ConfigurationError, DataError, HSIError
from .metamer import black_metamer_cube, build_projector, build_pu_basis, pu_metamer_cube
from .metrics import REPORT_FIELDS, posterior_stats, psnr, report_row
from .operators import NoiseModel, add_noise, gen_cassi_mask, make_operator, synth_psf
from .pipeline import SWEEP_KEYS, fit_prior, operator_from_config, parse_grid, run_sweep, sample_posterior


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _fail(kind, message, status):
    print(json.dumps({"error": kind, "message": " ".join(str(message).split())}), file=sys.stderr)
    return status


def _fmt(v):
    if isinstance(v, float):
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return repr(v)
    return str(v)


def _write_rows(path, rows, fields):
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(fields)
    for row in rows:
        w.writerow([_fmt(row[f]) for f in fields])
    io.atomic_write_text(path, buf.getvalue())


def _summary(**fields):
    print(" ".join(f"{k}={_fmt(v)}" for k, v in fields.items()))


# -- subcommands ------------------------------------------------------------


def cmd_forward(a):
    cube = io.read_cube(a.cube)
    srf = io.read_srf(a.srf) if a.srf else None
    psf = io.read_psf(a.psf) if a.psf else None
    mask = io.read_mask(a.mask) if a.mask else None
    op = make_operator(a.op, cube.shape, srf=srf, psf=psf, mask=mask, shear=a.shear)
    y = op.apply(cube)
    if a.sigma_y:
        y = add_noise(y, NoiseModel(a.sigma_y, a.seed))
    io.write_array(a.out, y)
    _summary(op=a.op, shape="x".join(map(str, y.shape)), sigma_y=float(a.sigma_y))


def _rgb_psnr(q, reference, estimate):
    k = q.shape[0]
    rgb = lambda x: q.T @ np.asarray(x, dtype=float).reshape(k, -1)
    return psnr(rgb(reference), rgb(estimate))


def cmd_metamer(a):
    cube = io.read_cube(a.cube)
    srf = io.read_srf(a.srf)
    q = srf.matrix
    if a.method == "black":
        labels = io.read_labels(a.labels)
        proj = build_projector(srf)
        raw, alphas = black_metamer_cube(cube, labels, proj, np.random.default_rng(a.seed), clip=False,
                                         alpha_range=(a.alpha_min, a.alpha_max))
        raw = np.asarray(raw)
        n_gamut = int(np.sum(np.any((raw < 0) | (raw > 1), axis=0)))
        n_fail = 0
    else:
        if a.illuminant:
            grid, illum = io.read_illuminant(a.illuminant)
            if grid != srf.grid:
                raise ConfigurationError("illuminant and SRF wavelength grids differ")
        else:
            illum = None
        basis = build_pu_basis(srf.grid, a.m, illum, srf)
        res = pu_metamer_cube(cube, basis, srf, a.seed, clip=False)
        raw = np.asarray(res.cube)
        n_gamut, n_fail = res.out_of_gamut, res.failures
    clipped = np.clip(raw, 0.0, 1.0)
    io.write_cube(cube.with_data(clipped), a.out)
    _summary(method=a.method, rgb_psnr_pre_clip=_rgb_psnr(q, cube, raw),
             rgb_psnr_post_clip=_rgb_psnr(q, cube, clipped),
             out_of_gamut=n_gamut, failures=n_fail)


def _workers(a, cfg):
    return a.workers if a.workers is not None else cfg.get("io", "workers")


def cmd_sample(a):
    cfg = io.read_config(a.config)
    y = io.read_array(a.measurement)
    prior = io.read_prior(a.prior)
    op = operator_from_config(cfg, prior.shape)
    scfg = cfg.sampler_config()
    ens, refl, u = sample_posterior(op, y, prior, scfg, _workers(a, cfg), cfg.get("io", "clip_members"))
    grid = op.srf.grid if hasattr(op, "srf") and hasattr(op.srf, "grid") else None
    meta = {"config": scfg.to_dict(), "operator": ens.operator, "seeds": [str(s) for s in ens.seeds],
            "domain": "reflectance", "clipped": cfg.get("io", "clip_members")}
    io.write_ensemble(a.out_dir, refl, u.mean, u.std, meta, grid)
    _summary(members=len(ens), mean_std=float(np.mean(u.std)))


def _reference(path):
    return np.asarray(io.read_cube(path), dtype=float)


def cmd_metrics(a):
    ref = _reference(a.ref)
    members, meta = io.read_ensemble(a.ensemble_dir)
    if members.shape[1:] != ref.shape:
        raise DataError(f"ensemble members {members.shape[1:]} and reference {ref.shape} differ in shape")
    u = posterior_stats(members)
    kind = meta.get("operator", {}).get("kind", "unknown")
    row = report_row(a.image_id, kind, ref, u, a.k)
    _write_rows(a.out, [row], REPORT_FIELDS)
    _summary(**{k: row[k] for k in ("psnr", "sam", "picp", "bcm_rate")})


def cmd_sweep(a):
    cfg = io.read_config(a.config)
    grid = parse_grid(a.grid)
    y = io.read_array(a.measurement)
    prior = io.read_prior(a.prior)
    ref = _reference(a.ref)
    op = operator_from_config(cfg, prior.shape)
    rows = run_sweep(cfg, grid, op, y, prior, ref, a.image_id, _workers(a, cfg))
    _write_rows(a.out, rows, SWEEP_KEYS + REPORT_FIELDS)
    _summary(cells=len(rows))


def cmd_prior(a):
    prior = fit_prior([io.read_cube(p) for p in a.cube], a.floor)
    io.write_prior(prior, a.out)
    _summary(shape="x".join(map(str, prior.shape)), mean_variance=float(prior.variance.mean()))


def _param(text):
    key, sep, value = text.partition("=")
    if not sep:
        raise argparse.ArgumentTypeError(f"expected key=value, got {text!r}")
    try:
        return key.strip(), float(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"non-numeric value in {text!r}")


def _grid_arg(a):
    if a.srf:
        return io.read_srf(a.srf).grid
    from .core import WavelengthGrid
    return WavelengthGrid.uniform(a.start, a.stop, a.bands)


def cmd_psf_gen(a):
    psf = synth_psf(a.kind, _grid_arg(a), a.size, **dict(a.param or []))
    io.write_psf(psf, a.out)
    _summary(kind=a.kind, bands=psf.K, size=psf.size)


def cmd_mask_gen(a):
    mask = gen_cassi_mask(a.rows, a.cols, a.seed, a.density)
    io.write_mask(mask, a.out)
    _summary(rows=a.rows, cols=a.cols, density=float(mask.values.mean()))


def cmd_srf_gen(a):
    io.write_srf(camera_srf(_grid_arg(a)), a.out)
    _summary(bands=len(_grid_arg(a)))


def cmd_cube_gen(a):
    """Smooth random reflectance cube, for demos."""
    rng = np.random.default_rng(a.seed)
    lam = np.linspace(0.0, 1.0, a.bands)
    yy, xx = np.mgrid[0:a.rows, 0:a.cols] / max(a.rows, a.cols)
    data = np.zeros((a.bands, a.rows, a.cols))
    for _ in range(4):
        centre, width = rng.uniform(0, 1), rng.uniform(0.1, 0.4)
        spectrum = np.exp(-0.5 * ((lam - centre) / width) ** 2)
        fx, fy, ph = rng.uniform(0.5, 3, 2).tolist() + [rng.uniform(0, 2 * np.pi)]
        weight = 0.5 + 0.5 * np.sin(2 * np.pi * (fx * xx + fy * yy) + ph)
        data += spectrum[:, None, None] * weight[None]
    data = 0.05 + 0.9 * data / data.max()
    io.write_cube(HSICube(data, _grid_arg(a)), a.out)
    _summary(shape=f"{a.bands}x{a.rows}x{a.cols}")


# -- argument parsing ---------------------------------------------------------


def _grid_options(p):
    p.add_argument("--srf", help="take the wavelength grid from this SRF table")
    p.add_argument("--bands", type=int, default=31)
    p.add_argument("--start", type=float, default=400.0)
    p.add_argument("--stop", type=float, default=700.0)


def build_parser():
    p = _Parser(prog="hsipost", description="Hyperspectral posterior sampling toolkit")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    f = sub.add_parser("forward", help="simulate a measurement")
    f.add_argument("--op", required=True, choices=("srf", "optics", "cassi"))
    f.add_argument("--cube", required=True)
    f.add_argument("--srf")
    f.add_argument("--psf")
    f.add_argument("--mask")
    f.add_argument("--shear", type=int, default=1)
    f.add_argument("--sigma-y", type=float, default=0.0)
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--out", required=True)
    f.set_defaults(func=cmd_forward)

    m = sub.add_parser("metamer", help="metameric augmentation")
    msub = m.add_subparsers(dest="method", required=True, parser_class=_Parser)
    mb = msub.add_parser("black")
    mb.add_argument("--cube", required=True)
    mb.add_argument("--labels", required=True)
    mb.add_argument("--srf", required=True)
    mb.add_argument("--seed", type=int, default=0)
    mb.add_argument("--alpha-min", type=float, default=-1.0)
    mb.add_argument("--alpha-max", type=float, default=2.0)
    mb.add_argument("--out", required=True)
    mb.set_defaults(func=cmd_metamer)
    mp = msub.add_parser("pu")
    mp.add_argument("--cube", required=True)
    mp.add_argument("--srf", required=True)
    mp.add_argument("--m", type=int, default=8)
    mp.add_argument("--illuminant")
    mp.add_argument("--seed", type=int, default=0)
    mp.add_argument("--out", required=True)
    mp.set_defaults(func=cmd_metamer)

    s = sub.add_parser("sample", help="draw a posterior ensemble")
    s.add_argument("--config", required=True)
    s.add_argument("--measurement", required=True)
    s.add_argument("--prior", required=True)
    s.add_argument("--out-dir", required=True)
    s.add_argument("--workers", type=int)
    s.set_defaults(func=cmd_sample)

    r = sub.add_parser("metrics", help="score an ensemble against a reference")
    r.add_argument("--ref", required=True)
    r.add_argument("--ensemble-dir", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--k", type=float, default=2.0)
    r.add_argument("--image-id", default="image")
    r.set_defaults(func=cmd_metrics)

    w = sub.add_parser("sweep", help="guidance-parameter grid")
    w.add_argument("--config", required=True)
    w.add_argument("--grid", required=True)
    w.add_argument("--measurement", required=True)
    w.add_argument("--prior", required=True)
    w.add_argument("--ref", required=True)
    w.add_argument("--image-id", default="image")
    w.add_argument("--out", required=True)
    w.add_argument("--workers", type=int)
    w.set_defaults(func=cmd_sweep)

    pr = sub.add_parser("prior", help="fit a diagonal Gaussian prior from cubes")
    pr.add_argument("--cube", required=True, action="append")
    pr.add_argument("--floor", type=float, default=1e-4)
    pr.add_argument("--out", required=True)
    pr.set_defaults(func=cmd_prior)

    ps = sub.add_parser("psf-gen", help="synthetic PSF stack")
    ps.add_argument("--kind", required=True, choices=("gaussian", "grating", "rotational"))
    ps.add_argument("--size", type=int, default=15)
    ps.add_argument("--param", type=_param, action="append", help="kind-specific key=value")
    _grid_options(ps)
    ps.add_argument("--out", required=True)
    ps.set_defaults(func=cmd_psf_gen)

    mg = sub.add_parser("mask-gen", help="random binary coded aperture")
    mg.add_argument("--rows", type=int, required=True)
    mg.add_argument("--cols", type=int, required=True)
    mg.add_argument("--seed", type=int, default=0)
    mg.add_argument("--density", type=float, default=0.5)
    mg.add_argument("--out", required=True)
    mg.set_defaults(func=cmd_mask_gen)

    sg = sub.add_parser("srf-gen", help="smooth three-channel camera response table")
    _grid_options(sg)
    sg.add_argument("--out", required=True)
    sg.set_defaults(func=cmd_srf_gen)

    cg = sub.add_parser("cube-gen", help="smooth random reflectance cube")
    cg.add_argument("--rows", type=int, default=32)
    cg.add_argument("--cols", type=int, default=32)
    cg.add_argument("--seed", type=int, default=0)
    _grid_options(cg)
    cg.add_argument("--out", required=True)
    cg.set_defaults(func=cmd_cube_gen)
    return p


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        return _fail("UsageError", exc, 2)
    try:
        args.func(args)
    except HSIError as exc:
        return _fail(type(exc).__name__, exc, 1)
    except OSError as exc:
        return _fail(type(exc).__name__, f"{exc.strerror or exc}: {exc.filename or ''}", 1)
    except (ValueError, KeyError, TypeError) as exc:
        return _fail(type(exc).__name__, exc, 1)
    return 0


if __name__ == "__main__":
    sys.exit(main())
