"""File formats: the HSC1 cube container, SRF/illuminant text tables,
16-bit PGM label maps, prior and ensemble directories, pipeline config.

HSC1 layout (all little-endian)::

    0   4 bytes  magic b"HSC1"
    4   uint32   M
    8   uint32   N
    12  uint32   K
    16  uint32   flags   bit 0: model range, bit 1: non-spectral axis
    20  K float32 wavelengths (nm); channel indices when bit 1 is set
    ..  M*N*K float32 payload, band-major planar

Cubes, PSF stacks (P x P x K), masks (1 band), measurements and prior
moments all share this one container.
"""

from __future__ import annotations

import configparser
import csv
import io as _io
import json
import os
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import MODEL, REFLECTANCE, CodedMask, HSICube, LabelMap, PSFStack, SpectralResponse, WavelengthGrid
from .errors import ConfigurationError, FormatError

MAGIC = b"HSC1"
HEADER = struct.Struct("<4s4I")
FLAG_MODEL = 1
FLAG_CHANNELS = 2
KNOWN_FLAGS = FLAG_MODEL | FLAG_CHANNELS


# -- atomic writes --------------------------------------------------------


def atomic_write(path, data):
    """Write bytes to ``path`` through a temp file in the same directory and rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text):
    atomic_write(path, text.encode("utf-8"))


# -- HSC1 -----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class RawContainer:
    data: np.ndarray        # float32, (K, M, N)
    wavelengths: np.ndarray  # float32, (K,)
    flags: int


def encode_array(data, wavelengths=None, flags=0):
    """HSC1 bytes for a ``(K, M, N)`` array."""
    a = np.asarray(data)
    if a.ndim != 3:
        raise FormatError(f"container payload must be 3-D (K, M, N), got shape {a.shape}")
    k, m, n = a.shape
    if wavelengths is None:
        wavelengths = np.arange(k)
        flags |= FLAG_CHANNELS
    wl = np.asarray(wavelengths, dtype="<f4")
    if wl.shape != (k,):
        raise FormatError(f"need {k} wavelengths, got {wl.shape}")
    if k > 1 and np.any(np.diff(wl) <= 0):
        raise FormatError("wavelengths must be strictly increasing after float32 rounding")
    return (HEADER.pack(MAGIC, m, n, k, flags) + wl.tobytes()
            + np.ascontiguousarray(a, dtype="<f4").tobytes())


def decode_array(buf):
    buf = bytes(buf)
    if len(buf) < 4 or buf[:4] != MAGIC:
        raise FormatError(f"bad magic {buf[:4]!r}, expected {MAGIC!r}", 0)
    if len(buf) < HEADER.size:
        raise FormatError(f"truncated header: {len(buf)} of {HEADER.size} bytes", len(buf))
    _, m, n, k, flags = HEADER.unpack_from(buf)
    if flags & ~KNOWN_FLAGS:
        raise FormatError(f"unknown flag bits {flags:#x}", 16)
    if k == 0:
        raise FormatError("band count K is zero", 12)
    wl_end = HEADER.size + 4 * k
    if len(buf) < wl_end:
        raise FormatError(f"truncated wavelength table: need {wl_end} bytes, have {len(buf)}", len(buf))
    wl = np.frombuffer(buf, dtype="<f4", count=k, offset=HEADER.size)
    if not np.all(np.isfinite(wl)):
        bad = int(np.flatnonzero(~np.isfinite(wl))[0])
        raise FormatError(f"non-finite wavelength at index {bad}", HEADER.size + 4 * bad)
    steps = np.flatnonzero(np.diff(wl) <= 0)
    if steps.size:
        bad = int(steps[0]) + 1
        raise FormatError(f"wavelengths not strictly increasing at index {bad}", HEADER.size + 4 * bad)
    end = wl_end + 4 * m * n * k
    if len(buf) < end:
        raise FormatError(f"truncated payload: need {end} bytes, have {len(buf)}", len(buf))
    if len(buf) > end:
        raise FormatError(f"{len(buf) - end} trailing bytes after payload", end)
    data = np.frombuffer(buf, dtype="<f4", count=m * n * k, offset=wl_end).reshape(k, m, n)
    return RawContainer(data, wl, flags)


def read_raw(path):
    return decode_array(Path(path).read_bytes())


def write_raw(path, data, wavelengths=None, flags=0):
    atomic_write(path, encode_array(data, wavelengths, flags))


def _is_channel_grid(grid):
    return grid is None or np.array_equal(grid.samples, np.arange(len(grid)))


def encode_cube(cube):
    flags = FLAG_MODEL if cube.domain == MODEL else 0
    wl = None if _is_channel_grid(cube.grid) else cube.grid.samples
    return encode_array(cube.data, wl, flags)


def write_cube(cube, path):
    """Store an :class:`HSICube` as float32 HSC1."""
    if not isinstance(cube, HSICube):
        cube = HSICube(cube)
    atomic_write(path, encode_cube(cube))


def _grid_from(raw):
    if raw.flags & FLAG_CHANNELS or raw.wavelengths.size < 2:
        return None
    return WavelengthGrid(raw.wavelengths.astype(float))


def cube_from_raw(raw):
    domain = MODEL if raw.flags & FLAG_MODEL else REFLECTANCE
    grid = _grid_from(raw)
    data = raw.data.astype(float)
    if grid is None and data.shape[0] > 1:
        # channel-indexed payloads (measurements, moments) get a 0..K-1 grid
        grid = WavelengthGrid(np.arange(data.shape[0], dtype=float))
    return HSICube(data, grid, domain)


def read_cube(path):
    return cube_from_raw(read_raw(path))


def read_array(path):
    """Payload of an HSC1 file as a float64 ``(K, M, N)`` array."""
    return read_raw(path).data.astype(float)


def write_array(path, data, domain=REFLECTANCE):
    """Store a measurement-like array with channel indices in place of wavelengths."""
    write_raw(path, np.asarray(data, dtype=float), None, FLAG_MODEL if domain == MODEL else 0)


def read_psf(path):
    """PSF stack stored as a ``P x P x K`` cube."""
    raw = read_raw(path)
    data = raw.data.astype(float)
    # renormalize after float32 storage so the unit-sum invariant holds
    data = data / data.sum(axis=(1, 2), keepdims=True)
    return PSFStack(data, _grid_from(raw))


def write_psf(psf, path):
    wl = None if psf.grid is None else psf.grid.samples
    write_raw(path, psf.kernels, wl)


def read_mask(path):
    raw = read_raw(path)
    if raw.data.shape[0] != 1:
        raise FormatError(f"mask file must hold one band, found {raw.data.shape[0]}", 12)
    return CodedMask(raw.data[0].astype(float))


def write_mask(mask, path):
    values = mask.values if isinstance(mask, CodedMask) else np.asarray(mask)
    write_raw(path, values[None], None)


# -- text tables ----------------------------------------------------------


def _read_table(path, width, what):
    rows = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), 1):
            if not row or not "".join(row).strip() or row[0].lstrip().startswith("#"):
                continue
            try:
                vals = [float(v) for v in row]
            except ValueError:
                if not rows and lineno == 1:
                    continue  # header
                raise FormatError(f"{what} line {lineno}: non-numeric field in {row!r}")
            if len(vals) != width:
                raise FormatError(f"{what} line {lineno}: expected {width} fields, got {len(vals)}")
            rows.append(vals)
    if len(rows) < 2:
        raise FormatError(f"{what} needs at least 2 data rows, got {len(rows)}")
    t = np.array(rows)
    if not np.all(np.isfinite(t)):
        raise FormatError(f"{what} contains non-finite values")
    if np.any(np.diff(t[:, 0]) <= 0):
        bad = int(np.flatnonzero(np.diff(t[:, 0]) <= 0)[0]) + 1
        raise FormatError(f"{what} wavelengths not strictly increasing at data row {bad + 1}")
    return t


def read_srf(path):
    """``wavelength_nm,R,G,B`` rows -> :class:`SpectralResponse`."""
    t = _read_table(path, 4, "SRF")
    return SpectralResponse(t[:, 1:], WavelengthGrid(t[:, 0]))


def write_srf(srf, path):
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["wavelength_nm", "R", "G", "B"])
    for lam, row in zip(srf.grid.samples, srf.matrix):
        w.writerow([repr(float(lam))] + [repr(float(v)) for v in row])
    atomic_write_text(path, buf.getvalue())


def read_illuminant(path):
    """``wavelength_nm,power`` rows -> (grid, values)."""
    t = _read_table(path, 2, "illuminant")
    return WavelengthGrid(t[:, 0]), t[:, 1]


def write_illuminant(grid, values, path):
    lines = ["wavelength_nm,power"]
    lines += [f"{float(l)!r},{float(v)!r}" for l, v in zip(grid.samples, values)]
    atomic_write_text(path, "\n".join(lines) + "\n")


# -- label maps (binary PGM, 16 bit) ---------------------------------------


def _pgm_token(buf, pos):
    n = len(buf)
    while pos < n:
        c = buf[pos:pos + 1]
        if c == b"#":
            while pos < n and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif c.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not buf[pos:pos + 1].isspace() and buf[pos:pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise FormatError("truncated PGM header", start)
    return buf[start:pos], pos


def decode_pgm(buf):
    if buf[:2] != b"P5":
        raise FormatError(f"bad PGM magic {buf[:2]!r}, expected b'P5'", 0)
    pos = 2
    fields = []
    for _ in range(3):
        tok, pos = _pgm_token(buf, pos)
        try:
            fields.append(int(tok))
        except ValueError:
            raise FormatError(f"non-integer PGM header field {tok!r}", pos - len(tok))
    width, height, maxval = fields
    if not 256 <= maxval <= 65535:
        raise FormatError(f"label map must be 16-bit (maxval 256..65535), got {maxval}", pos - len(tok))
    if pos >= len(buf) or not buf[pos:pos + 1].isspace():
        raise FormatError("missing whitespace after PGM header", pos)
    pos += 1
    end = pos + 2 * width * height
    if len(buf) < end:
        raise FormatError(f"truncated PGM raster: need {end} bytes, have {len(buf)}", len(buf))
    return np.frombuffer(buf, dtype=">u2", count=width * height, offset=pos).reshape(height, width)


def read_labels(path):
    return LabelMap(decode_pgm(Path(path).read_bytes()).astype(np.int64))


def encode_pgm(values, maxval=None):
    v = np.asarray(values)
    if v.ndim != 2 or v.min() < 0 or v.max() > 65535:
        raise FormatError("PGM raster must be 2-D with values in 0..65535")
    maxval = max(int(v.max()), 256) if maxval is None else int(maxval)
    height, width = v.shape
    return f"P5\n{width} {height}\n{maxval}\n".encode() + v.astype(">u2").tobytes()


def write_labels(labels, path):
    lab = labels.labels if isinstance(labels, LabelMap) else np.asarray(labels)
    atomic_write(path, encode_pgm(lab))


# -- priors and ensembles ---------------------------------------------------


def write_prior(prior, directory):
    """Diagonal Gaussian prior as ``mean.hsc`` and ``var.hsc`` (model range)."""
    d = Path(directory)
    write_raw(d / "mean.hsc", prior.mean, None, FLAG_MODEL)
    write_raw(d / "var.hsc", prior.variance, None, FLAG_MODEL)


def read_prior(directory):
    from .prior import GaussianAnalyticPrior

    d = Path(directory)
    return GaussianAnalyticPrior(read_array(d / "mean.hsc"), read_array(d / "var.hsc"))


def member_path(directory, index):
    return Path(directory) / f"member_{index:03d}.hsc"


def write_ensemble(directory, members, mean, std, meta, grid=None):
    """Member cubes, mean/std cubes and a JSON description, all in reflectance range."""
    d = Path(directory)
    wl = None if grid is None else grid.samples
    for k, member in enumerate(members):
        write_raw(member_path(d, k), member, wl)
    write_raw(d / "mean.hsc", mean, wl)
    write_raw(d / "std.hsc", std, wl)
    atomic_write_text(d / "ensemble.json", json.dumps(meta, indent=2, sort_keys=True) + "\n")


def read_ensemble(directory):
    """(members (S, K, M, N), metadata) from an ensemble directory."""
    d = Path(directory)
    meta_path = d / "ensemble.json"
    meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
    paths = sorted(d.glob("member_*.hsc"))
    if not paths:
        raise FormatError(f"no member files in {d}")
    return np.stack([read_array(p) for p in paths]), meta


# -- pipeline configuration -------------------------------------------------


# section -> key -> (type, default); a default of None means "unset"
CONFIG_SCHEMA = {
    "operator": {
        "kind": (str, "srf"),          # srf | optics | cassi
        "srf": (str, None),            # SRF table path
        "psf": (str, None),            # PSF stack container path
        "mask": (str, None),           # CASSI mask container path
        "shear": (int, 1),             # CASSI shear, pixels per band
    },
    "sampler": {
        "steps": (int, 40),            # noise levels before the final 0
        "sigma_min": (float, 0.002),
        "sigma_max": (float, 80.0),
        "rho": (float, 7.0),
        "s_churn": (float, 10.0),
        "s_min": (float, 0.05),
        "s_max": (float, 50.0),
        "s_noise": (float, 1.003),
        "n_samples": (int, 20),
        "seed": (int, 0),              # root seed; member seeds derive from it
    },
    "guidance": {
        "sigma_y": (float, 0.001),
        "nu": (float, 1.0),
        "lambda": (float, 0.1),
    },
    "metamer": {
        "method": (str, "black"),      # black | pu
        "m": (int, 8),                 # PU basis size
        "seed": (int, 0),
        "shrink": (float, 0.8),        # PU free-coordinate sampling scale
        "max_tries": (int, 64),
        "alpha_min": (float, -1.0),    # black-metamer scaling range
        "alpha_max": (float, 2.0),
    },
    "io": {
        "workers": (int, 1),
        "clip_members": (bool, True),  # clip reflectance-range members to [0, 1]
    },
}


@dataclass(frozen=True)
class PipelineConfig:
    values: dict
    base_dir: str = "."

    def get(self, section, key):
        return self.values[section][key]

    def path(self, section, key):
        v = self.values[section][key]
        if v is None:
            return None
        p = Path(v)
        return p if p.is_absolute() else Path(self.base_dir) / p

    def sampler_config(self, **overrides):
        from .prior import karras_schedule
        from .sampler import SamplerConfig

        s, g = dict(self.values["sampler"]), dict(self.values["guidance"])
        g["lam"] = g.pop("lambda")
        for k, v in overrides.items():
            (g if k in g else s)[k] = v
        return SamplerConfig(
            schedule=karras_schedule(s["steps"], s["sigma_min"], s["sigma_max"], s["rho"]),
            s_churn=s["s_churn"], s_min=s["s_min"], s_max=s["s_max"], s_noise=s["s_noise"],
            sigma_y=g["sigma_y"], nu=g["nu"], lam=g["lam"],
            n_samples=s["n_samples"], seed=s["seed"])


def _convert(section, key, kind, raw, parser):
    try:
        if kind is bool:
            return parser._convert_to_boolean(raw)
        return kind(raw)
    except ValueError:
        raise ConfigurationError(f"[{section}] {key} = {raw!r} is not a valid {kind.__name__}")


def parse_config(text, base_dir="."):
    parser = configparser.ConfigParser(interpolation=None, default_section="\0")
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigurationError(f"config syntax: {' '.join(str(exc).split())}")
    values = {sec: {k: d for k, (_, d) in keys.items()} for sec, keys in CONFIG_SCHEMA.items()}
    for section in parser.sections():
        if section not in CONFIG_SCHEMA:
            raise ConfigurationError(f"unknown config section [{section}]")
        for key, raw in parser.items(section):
            if key not in CONFIG_SCHEMA[section]:
                raise ConfigurationError(f"unknown config key [{section}] {key}")
            kind = CONFIG_SCHEMA[section][key][0]
            values[section][key] = _convert(section, key, kind, raw.strip(), parser)
    cfg = PipelineConfig(values, str(base_dir))
    validate_config(cfg)
    return cfg


def validate_config(cfg):
    v = cfg.values
    if v["operator"]["kind"] not in ("srf", "optics", "cassi"):
        raise ConfigurationError(f"[operator] kind must be srf, optics or cassi, got {v['operator']['kind']!r}")
    if v["operator"]["shear"] < 0:
        raise ConfigurationError("[operator] shear must be >= 0")
    if v["metamer"]["method"] not in ("black", "pu"):
        raise ConfigurationError(f"[metamer] method must be black or pu, got {v['metamer']['method']!r}")
    if v["metamer"]["m"] < 3:
        raise ConfigurationError("[metamer] m must be >= 3")
    if not 0 < v["metamer"]["shrink"] <= 1:
        raise ConfigurationError("[metamer] shrink must lie in (0, 1]")
    if v["metamer"]["max_tries"] < 1:
        raise ConfigurationError("[metamer] max_tries must be >= 1")
    if not v["metamer"]["alpha_min"] <= v["metamer"]["alpha_max"]:
        raise ConfigurationError("[metamer] alpha_min must not exceed alpha_max")
    if v["io"]["workers"] < 1:
        raise ConfigurationError("[io] workers must be >= 1")
    cfg.sampler_config()  # schedule and sampler checks


def read_config(path):
    path = Path(path)
    return parse_config(path.read_text(), path.parent)


def format_config(values):
    """Render a values dict back to config text (keys in schema order)."""
    lines = []
    for section, keys in CONFIG_SCHEMA.items():
        lines.append(f"[{section}]")
        for key in keys:
            v = values.get(section, {}).get(key, keys[key][1])
            if v is not None:
                lines.append(f"{key} = {str(v).lower() if isinstance(v, bool) else v}")
        lines.append("")
    return "\n".join(lines)
